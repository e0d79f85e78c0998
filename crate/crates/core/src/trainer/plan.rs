use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::losses::Segment;
use crate::physics::{characteristic_air_time, SoilModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanScheme {
    LogUniform,
    Simplified,
}

/// Ascending segment boundaries `0 = T_0 < T_1 < … < T_N = T_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub boundaries: Vec<f64>,
    pub scheme: PlanScheme,
}

impl SegmentationPlan {
    pub fn new(boundaries: Vec<f64>, scheme: PlanScheme) -> Result<Self, TrainError> {
        let plan = Self { boundaries, scheme };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.boundaries.len() < 2 {
            return Err(TrainError::Plan("a plan needs at least one segment".into()));
        }
        if self.boundaries[0] != 0.0 {
            return Err(TrainError::Plan(format!("first boundary must be 0, got {}", self.boundaries[0])));
        }
        if let Some(w) = self.boundaries.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(TrainError::Plan(format!("boundaries must increase strictly, found {} then {}", w[0], w[1])));
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn t_max(&self) -> f64 {
        *self.boundaries.last().expect("validated plan")
    }

    /// Segments with 1-based indices for a layer of thickness `h`.
    pub fn segments(&self, h: f64) -> Result<Vec<Segment>, TrainError> {
        self.boundaries
            .windows(2)
            .enumerate()
            .map(|(k, w)| Ok(Segment::new(k + 1, w[0], w[1], h)?))
            .collect()
    }

    /// 0-based index of the segment owning `t`: `(T_{n−1}, T_n]`, with `t = 0` in the first.
    pub fn owner(&self, t: f64) -> Option<usize> {
        if !(0.0..=self.t_max()).contains(&t) {
            return None;
        }
        let k = self.boundaries[1..].partition_point(|&b| b < t);
        Some(k.min(self.n_segments() - 1))
    }
}

/// `10^e`, exact when `e` is (numerically) an integer.
fn decade_power(e: f64) -> f64 {
    let r = e.round();
    if (e - r).abs() < 1e-9 {
        10f64.powi(r as i32)
    } else {
        10f64.powf(e)
    }
}

/// Log-uniform plan `T_k = 10^{(k/N)·log₁₀ T_max}`.
pub fn plan_segments(t_max: f64, n: usize) -> Result<SegmentationPlan, TrainError> {
    if n == 0 {
        return Err(TrainError::Plan("segment count must be at least 1".into()));
    }
    if !(t_max > 1.0 && t_max.is_finite()) {
        return Err(TrainError::Plan(format!("T_max must exceed 1 s, got {t_max}")));
    }
    let lg = t_max.log10();
    let mut b = vec![0.0];
    b.extend((1..n).map(|k| decade_power(k as f64 / n as f64 * lg)));
    b.push(t_max);
    SegmentationPlan::new(b, PlanScheme::LogUniform)
}

/// First boundary at the air-dissipation time, the rest of `[t_s, T_max]` split log-uniformly.
pub fn plan_segments_simplified(sm: &SoilModel, t_max: f64, n_rest: usize) -> Result<SegmentationPlan, TrainError> {
    if n_rest == 0 {
        return Err(TrainError::Plan("remaining segment count must be at least 1".into()));
    }
    let ts = characteristic_air_time(sm)?;
    if !(ts < t_max) {
        return Err(TrainError::Plan(format!("air dissipation time {ts:e} s is not below T_max = {t_max:e} s")));
    }
    let (lo, hi) = (ts.log10(), t_max.log10());
    let mut b = vec![0.0, ts];
    b.extend((1..n_rest).map(|k| decade_power(lo + k as f64 / n_rest as f64 * (hi - lo))));
    b.push(t_max);
    SegmentationPlan::new(b, PlanScheme::Simplified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_decade_windows() {
        let p = plan_segments(1e10, 5).unwrap();
        assert_eq!(p.boundaries, vec![0.0, 1e2, 1e4, 1e6, 1e8, 1e10]);
        assert_eq!(plan_segments(1e10, 2).unwrap().boundaries, vec![0.0, 1e5, 1e10]);
        assert_eq!(plan_segments(3e4, 1).unwrap().boundaries, vec![0.0, 3e4]);
    }

    #[test]
    fn bad_plans_rejected() {
        assert!(matches!(plan_segments(1e10, 0), Err(TrainError::Plan(_))));
        assert!(matches!(plan_segments(1.0, 3), Err(TrainError::Plan(_))));
        assert!(matches!(SegmentationPlan::new(vec![0.0, 5.0, 5.0], PlanScheme::LogUniform), Err(TrainError::Plan(_))));
        assert!(matches!(SegmentationPlan::new(vec![1.0, 5.0], PlanScheme::LogUniform), Err(TrainError::Plan(_))));
    }

    #[test]
    fn simplified_plan() {
        let sm = SoilModel::reference();
        let p = plan_segments_simplified(&sm, 1e10, 3).unwrap();
        assert_eq!(p.boundaries, vec![0.0, 1e7, 1e8, 1e9, 1e10]);
        assert_eq!(p.scheme, PlanScheme::Simplified);
        // H²/cva stays inside [1e7, 1e8) for this scaling, so the plan is unchanged.
        let faster = SoilModel { cva: sm.cva * 1.5, ..sm };
        assert_eq!(plan_segments_simplified(&faster, 1e10, 3).unwrap().boundaries, p.boundaries);
        let tripled = SoilModel { cva: sm.cva * 3.0, ..sm };
        assert_eq!(plan_segments_simplified(&tripled, 1e10, 3).unwrap().boundaries[1], 1e6);
        let one = plan_segments_simplified(&sm, 1e8, 1).unwrap();
        assert_eq!(one.boundaries, vec![0.0, 1e7, 1e8]);
        assert!(matches!(plan_segments_simplified(&sm, 1e7, 2), Err(TrainError::Plan(_))));
    }

    #[test]
    fn ownership_is_closed_right() {
        let p = plan_segments(1e10, 5).unwrap();
        assert_eq!(p.owner(0.0), Some(0));
        assert_eq!(p.owner(1e2), Some(0));
        assert_eq!(p.owner(1.0000001e2), Some(1));
        assert_eq!(p.owner(5e5), Some(2));
        assert_eq!(p.owner(1e10), Some(4));
        assert_eq!(p.owner(1.1e10), None);
        assert_eq!(p.owner(-1.0), None);
    }

    proptest! {
        #[test]
        fn plans_are_strictly_increasing(lg in 0.5f64..12.0, n in 1usize..12) {
            let t_max = 10f64.powf(lg);
            let p = plan_segments(t_max, n).unwrap();
            prop_assert_eq!(p.n_segments(), n);
            prop_assert_eq!(p.t_max(), t_max);
            prop_assert!(p.boundaries.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn every_time_has_one_owner(t in 0.0f64..1e10) {
            let p = plan_segments(1e10, 5).unwrap();
            let k = p.owner(t).unwrap();
            prop_assert!(t <= p.boundaries[k + 1]);
            prop_assert!(k == 0 || t > p.boundaries[k]);
        }
    }
}
