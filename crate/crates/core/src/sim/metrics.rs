use super::log::Metrics;
use super::tasks::{formation_controller, TaskKind, TaskParams};
use crate::controllers::PidGains;
use crate::timeline::Trajectory;

/// Mean of `regret[from..]`.
pub fn average_regret(regret: &[f64], from: usize) -> f64 {
    let tail = &regret[from.min(regret.len())..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// RMS error of the follower's gap to the leader against the reference gap.
pub fn gap_error(x: &Trajectory, gap: f64) -> f64 {
    let n = x.len().max(1) as f64;
    let sq: f64 = x.iter().map(|(_, s)| (s[0] - s[2] - gap).powi(2)).sum();
    (sq / n).sqrt()
}

/// RMS distance of the followers to their formation slots.
pub fn formation_deviation(p: &TaskParams, x: &Trajectory, z: &Trajectory) -> f64 {
    let c = formation_controller(p);
    let mut sq = 0.0;
    let mut count = 0usize;
    for ((_, xs), (_, zs)) in x.iter().zip(z.iter()) {
        for (i, slot) in c.slot_positions(xs, zs).iter().enumerate() {
            let at = 5 * (i + 1);
            sq += (xs[at] - slot[0]).powi(2) + (xs[at + 1] - slot[1]).powi(2);
            count += 1;
        }
    }
    (sq / count.max(1) as f64).sqrt()
}

pub fn compute_metrics(
    task: TaskKind,
    p: &TaskParams,
    x: &Trajectory,
    z: &Trajectory,
    regret: &[f64],
) -> Metrics {
    let avg_regret = average_regret(regret, 0);
    let (avg_distance, avg_deviation) = if task.is_formation() {
        (None, Some(formation_deviation(p, x, z)))
    } else {
        (Some(gap_error(x, PidGains::default().gap)), None)
    };
    Metrics {
        avg_regret,
        log_loss: avg_regret.log10(),
        avg_distance,
        avg_deviation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::FormationKind;
    use crate::sim::tasks::formation_start;
    use crate::timeline::Tick;

    #[test]
    fn hand_arithmetic() {
        assert_eq!(average_regret(&[1.0, 2.0, 3.0, 6.0], 0), 3.0);
        assert_eq!(average_regret(&[1.0, 2.0, 3.0, 6.0], 2), 4.5);
        assert_eq!(average_regret(&[1.0], 5), 0.0);
        // gaps 1.5, 2.5, 0.5 against 1.5: errors 0, 1, -1
        let x = Trajectory::from_flat(
            Tick(0),
            4,
            vec![0.0, 0.0, -1.5, 0.0, 3.0, 0.0, 0.5, 0.0, 1.0, 0.0, 0.5, 0.0],
        );
        assert!((gap_error(&x, 1.5) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn deviation_of_shifted_follower() {
        let p = TaskParams::default();
        let c = formation_controller(&p);
        let mut x0 = formation_start(&c, FormationKind::Line, 1.0);
        let z = vec![
            1.0,
            0.0,
            FormationKind::Line.id(),
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        ];
        let on = Trajectory::from_flat(Tick(0), 20, x0.clone());
        let zt = Trajectory::from_flat(Tick(0), 12, z.clone());
        assert!(formation_deviation(&p, &on, &zt) < 1e-12);
        // one of three followers off by 0.3 m: sqrt(0.09 / 3)
        x0[11] += 0.3;
        let off = Trajectory::from_flat(Tick(0), 20, x0);
        assert!((formation_deviation(&p, &off, &zt) - 0.03f64.sqrt()).abs() < 1e-12);
        let m = compute_metrics(TaskKind::FormationSwitching, &p, &off, &zt, &[10.0, 1000.0]);
        assert!((m.log_loss - 505f64.log10()).abs() < 1e-12);
        assert!(m.avg_distance.is_none());
    }
}
