use std::net::TcpListener;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use onevision::controllers::FormationKind;
use onevision::serve::{serve, LiveCommand, LiveSession, ServeOptions};
use onevision::sim::{RunConfig, TaskKind};
use onevision::timeline::Tick;
use serde_json::Value;
use tungstenite::Message;

fn config() -> RunConfig {
    RunConfig {
        task: TaskKind::FormationSwitching,
        ..Default::default()
    }
}

#[test]
fn websocket_round_trip() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = std::thread::spawn(move || {
        let opts = ServeOptions {
            speed: 1.0,
            max_ticks: Some(400),
        };
        serve(listener, &config(), opts, &AtomicBool::new(false)).unwrap()
    });

    let (mut ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}")).unwrap();
    let mut frames = Vec::new();
    let mut sent = false;
    let started = Instant::now();
    while started.elapsed() < Duration::from_secs(30) {
        let text = match ws.read() {
            Ok(Message::Text(t)) => t,
            Ok(_) => continue,
            Err(_) => break,
        };
        let frame: Value = serde_json::from_str(text.trim_end()).unwrap();
        if !sent {
            ws.send(Message::Text(
                r#"{"type":"steer","accel":2.0,"steer_rate":0.0,"note":"ignored"}"#.into(),
            ))
            .unwrap();
            ws.send(Message::Text(r#"{"type":"formation","id":"line"}"#.into()))
                .unwrap();
            sent = true;
        }
        frames.push(frame);
    }
    let session = server.join().unwrap();
    assert!(frames.len() > 10, "{} frames", frames.len());

    let first = &frames[0];
    assert_eq!(first["cars"].as_array().unwrap().len(), 4);
    assert_eq!(first["refs"].as_array().unwrap().len(), 3);
    assert_eq!(first["formation"], "triangle");
    for key in ["id", "x", "y", "theta", "v"] {
        assert!(first["cars"][0].get(key).is_some(), "{key}");
    }
    assert!(first["metrics"]["avg_deviation"].as_f64().is_some());
    let ts: Vec<u64> = frames.iter().map(|f| f["t"].as_u64().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
    assert!(ts.iter().all(|t| t % 5 == 0));

    let last = frames.last().unwrap();
    assert_eq!(last["formation"], "line");
    assert!(last["cars"][0]["v"].as_f64().unwrap() > 0.5);
    assert!(session.state()[3] > 0.5);
}

#[test]
fn steer_reaches_the_actuator_within_the_delay_budget() {
    let cfg = RunConfig {
        sensor_noise: 0.0,
        disturbance: 0.0,
        ..config()
    };
    let delays = cfg.delays().unwrap();
    let budget = delays.obs() + delays.control_interval() + delays.act();
    // every phase of the control interval
    for k0 in 100..100 + delays.control_interval() {
        let mut steered = LiveSession::new(&cfg).unwrap();
        let mut idle = LiveSession::new(&cfg).unwrap();
        while steered.now().0 < k0 {
            steered.step().unwrap();
            idle.step().unwrap();
        }
        steered.apply(LiveCommand::Steer {
            accel: 1.0,
            steer_rate: 0.0,
        });
        for _ in 0..2 * budget {
            steered.step().unwrap();
            idle.step().unwrap();
        }
        let first = (k0..steered.now().0)
            .find(|&t| steered.actuations().at(Tick(t)) != idle.actuations().at(Tick(t)))
            .expect("the command moves the fleet");
        assert!(
            first - k0 <= budget,
            "command at {k0} answered after {} ticks",
            first - k0
        );
    }
}

fn scripted(script: &[(u64, LiveCommand)], ticks: u64) -> LiveSession {
    let mut s = LiveSession::new(&config()).unwrap();
    let mut next = script.iter().peekable();
    while s.now().0 < ticks {
        while let Some((_, cmd)) = next.next_if(|(t, _)| *t == s.now().0) {
            s.apply(*cmd);
        }
        s.step().unwrap();
    }
    s
}

#[test]
fn command_log_replays_bit_exactly() {
    let script = [
        (
            0,
            LiveCommand::Steer {
                accel: 1.5,
                steer_rate: 0.0,
            },
        ),
        (
            80,
            LiveCommand::Steer {
                accel: 0.0,
                steer_rate: 0.2,
            },
        ),
        (150, LiveCommand::Formation(FormationKind::Circle)),
        (220, LiveCommand::Disconnect),
    ];
    let a = scripted(&script, 300);
    let b = scripted(&script, 300);
    let bits = |s: &LiveSession| {
        s.states()
            .as_flat()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.actuations(), b.actuations());
    let c = scripted(&script[..3], 300);
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn formation_switch_settles_within_ten_seconds() {
    let rate = config().rate_hz as u64;
    let switch_at = 10 * rate;
    let mut s = LiveSession::new(&config()).unwrap();
    s.apply(LiveCommand::Steer {
        accel: 1.0,
        steer_rate: 0.0,
    });
    while s.now().0 < 2 * rate {
        s.step().unwrap();
    }
    s.apply(LiveCommand::Steer {
        accel: 0.0,
        steer_rate: 0.0,
    });
    while s.now().0 < switch_at {
        s.step().unwrap();
    }
    let before = s.deviation();
    s.apply(LiveCommand::Formation(FormationKind::Line));
    let mut peak: f64 = 0.0;
    let mut settled = None;
    while s.now().0 < switch_at + 10 * rate {
        s.step().unwrap();
        let d = s.deviation();
        peak = peak.max(d);
        if settled.is_none() && peak > 2.0 * before && d < 2.0 * before {
            settled = Some(s.now().0 - switch_at);
        }
    }
    assert!(
        peak > 2.0 * before,
        "the switch should disturb the formation"
    );
    assert!(
        settled.is_some(),
        "deviation {before} before, {} after 10 s",
        s.deviation()
    );
}
