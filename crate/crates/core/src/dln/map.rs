use crate::autodiff::{ParamStore, Tensor};
use crate::data::{per_joint_error, WindowPair};
use crate::error::{HvisError, Result};
use crate::sln::{predict_windows, Sln};

/// Per-joint validation errors, their ranking, and the joints chosen for retraining.
#[derive(Clone, Debug, PartialEq)]
pub struct DeliberateMap {
    pub per_joint_error: Vec<f64>,
    pub ranking: Vec<usize>,
    pub selected: Vec<usize>,
}

/// `ceil(N / 4)`.
pub fn default_hard_count(joints: usize) -> usize {
    joints.div_ceil(4)
}

/// Mean of [`per_joint_error`] over windows, given predictions aligned with `windows`.
pub fn errors_from_predictions(preds: &[Tensor], windows: &[WindowPair]) -> Result<Vec<f64>> {
    if windows.is_empty() || preds.len() != windows.len() {
        return Err(HvisError::Contract(format!(
            "need one prediction per validation window, got {} for {}",
            preds.len(),
            windows.len()
        )));
    }
    let mut total = vec![0.0; windows[0].joints()];
    for (p, w) in preds.iter().zip(windows) {
        for (t, e) in total.iter_mut().zip(per_joint_error(p, &w.future)?) {
            *t += e;
        }
    }
    Ok(total.into_iter().map(|t| t / windows.len() as f64).collect())
}

/// Runs the frozen predictor over `windows` and records each joint's mean error (mm).
pub fn memorize_errors(sln: &Sln, store: &ParamStore, windows: &[WindowPair], batch_size: usize) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(HvisError::Contract("validation set is empty".into()));
    }
    let preds = predict_windows(sln, store, windows, batch_size)?;
    errors_from_predictions(&preds, windows)
}

/// Descending error order, ties by ascending joint index; the first `m` are selected.
pub fn rank_joints(per_joint_error: &[f64], m: usize) -> Result<DeliberateMap> {
    let n = per_joint_error.len();
    if m == 0 || m > n {
        return Err(HvisError::Parameter(format!("hard-joint count {m} outside 1..={n}")));
    }
    if let Some(j) = per_joint_error.iter().position(|e| !e.is_finite()) {
        return Err(HvisError::Parameter(format!("joint {j} has non-finite error {}", per_joint_error[j])));
    }
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| per_joint_error[b].total_cmp(&per_joint_error[a]).then(a.cmp(&b)));
    let selected = ranking[..m].to_vec();
    Ok(DeliberateMap { per_joint_error: per_joint_error.to_vec(), ranking, selected })
}

impl DeliberateMap {
    /// A map that selects nothing; fusion passes predictions through.
    pub fn disabled(per_joint_error: &[f64]) -> Result<Self> {
        let mut map = rank_joints(per_joint_error, per_joint_error.len().max(1))?;
        map.selected.clear();
        Ok(map)
    }

    pub fn m(&self) -> usize {
        self.selected.len()
    }

    pub fn joints(&self) -> usize {
        self.per_joint_error.len()
    }

    pub fn is_selected(&self, joint: usize) -> bool {
        self.selected.contains(&joint)
    }

    /// `joint<TAB>error<TAB>selected` per line, after a header line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("joint\terror\tselected\n");
        for (j, e) in self.per_joint_error.iter().enumerate() {
            s.push_str(&format!("{j}\t{e}\t{}\n", u8::from(self.is_selected(j))));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut errors = Vec::new();
        let mut flagged = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| HvisError::Checkpoint(format!("deliberate map line {}: {what}", i + 1));
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            if fields[0].parse::<usize>().ok() != Some(errors.len()) {
                return Err(bad("joint indices must count up from 0"));
            }
            errors.push(fields[1].parse::<f64>().map_err(|_| bad("error is not a number"))?);
            match fields[2] {
                "1" => flagged.push(errors.len() - 1),
                "0" => {}
                _ => return Err(bad("selected flag must be 0 or 1")),
            }
        }
        if flagged.is_empty() {
            return Self::disabled(&errors);
        }
        let map = rank_joints(&errors, flagged.len())?;
        let mut chosen = map.selected.clone();
        chosen.sort_unstable();
        if chosen != flagged {
            return Err(HvisError::Checkpoint("selected joints do not match the error ranking".into()));
        }
        Ok(map)
    }
}

/// Replaces the selected joints' rows of `sln_pred [F, N, 3]` with `dtc_pred [F, m, 3]`.
pub fn fuse_predictions(sln_pred: &Tensor, dtc_pred: Option<&Tensor>, map: &DeliberateMap) -> Result<Tensor> {
    let (f, n) = match *sln_pred.shape() {
        [f, n, 3] if n == map.joints() => (f, n),
        ref s => {
            return Err(HvisError::Contract(format!(
                "predictor output {s:?} does not match a map over {} joints",
                map.joints()
            )))
        }
    };
    let m = map.m();
    let Some(dtc) = dtc_pred else {
        if m == 0 {
            return Ok(sln_pred.clone());
        }
        return Err(HvisError::Contract(format!("map selects {m} joints but no deliberate prediction was given")));
    };
    if dtc.shape() != [f, m, 3] {
        return Err(HvisError::Contract(format!("deliberate prediction {:?}, expected [{f}, {m}, 3]", dtc.shape())));
    }
    let mut out = sln_pred.clone();
    let v = out.values_mut();
    for t in 0..f {
        for (k, &j) in map.selected.iter().enumerate() {
            let dst = (t * n + j) * 3;
            let src = (t * m + k) * 3;
            v[dst..dst + 3].copy_from_slice(&dtc.values()[src..src + 3]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_joints(&[0.1, 0.9, 0.5], 1).unwrap().selected, vec![1]);
        assert_eq!(rank_joints(&[2.0; 4], 2).unwrap().selected, vec![0, 1]);
        assert!(rank_joints(&[1.0, 2.0], 0).is_err());
        assert!(rank_joints(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn text_round_trip() {
        let map = rank_joints(&[0.25, 3.5, 1.0 / 3.0, 7.0], 2).unwrap();
        assert_eq!(DeliberateMap::from_text(&map.to_text()).unwrap(), map);
        let off = DeliberateMap::disabled(&[1.0, 2.0]).unwrap();
        assert_eq!(DeliberateMap::from_text(&off.to_text()).unwrap(), off);
        let tampered = map.to_text().replace("0\t0.25\t0", "0\t0.25\t1");
        assert!(DeliberateMap::from_text(&tampered).is_err());
    }

    #[test]
    fn fuse_replaces_only_selected() {
        let map = rank_joints(&[0.0, 5.0, 1.0], 1).unwrap();
        let sln = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
        let dtc = Tensor::filled(&[2, 1, 3], -1.0);
        let out = fuse_predictions(&sln, Some(&dtc), &map).unwrap();
        for t in 0..2 {
            for j in 0..3 {
                let row = &out.values()[(t * 3 + j) * 3..(t * 3 + j) * 3 + 3];
                if j == 1 {
                    assert_eq!(row, &[-1.0; 3]);
                } else {
                    assert_eq!(row, &sln.values()[(t * 3 + j) * 3..(t * 3 + j) * 3 + 3]);
                }
            }
        }
        let off = DeliberateMap::disabled(&[0.0, 5.0, 1.0]).unwrap();
        assert_eq!(fuse_predictions(&sln, None, &off).unwrap(), sln);
        let all = rank_joints(&[0.0, 5.0, 1.0], 3).unwrap();
        let dtc_all = Tensor::from_fn(&[2, 3, 3], |i| -(i as f64));
        // m = N: every row comes from the deliberate prediction, in ranking order
        let fused = fuse_predictions(&sln, Some(&dtc_all), &all).unwrap();
        assert_eq!(&fused.values()[3..6], &dtc_all.values()[0..3]);
        assert!(fuse_predictions(&sln, Some(&dtc), &all).is_err());
    }

    #[test]
    fn injected_offset_error() {
        let truth = Tensor::zeros(&[3, 2, 3]);
        let mut pred = truth.clone();
        for t in 0..3 {
            pred.values_mut()[(t * 2 + 1) * 3] = 0.02;
        }
        let w = WindowPair { observed: Tensor::zeros(&[1, 2, 3]), future: truth, start: 0 };
        let e = errors_from_predictions(&[pred.clone(), pred], &[w.clone(), w]).unwrap();
        assert_eq!(e[0], 0.0);
        assert!((e[1] - 20.0).abs() < 1e-12);
    }
}
