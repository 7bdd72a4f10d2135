use crate::autodiff::Tensor;
use crate::error::{HvisError, Result};

fn check_pair(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != truth.shape() || pred.shape().len() != 3 || pred.shape()[2] != 3 {
        return Err(HvisError::dim(
            "mpjpe",
            format!("prediction {:?} vs truth {:?}, both must be [frames, joints, 3]", pred.shape(), truth.shape()),
        ));
    }
    Ok((pred.shape()[0], pred.shape()[1]))
}

fn joint_distance(pred: &[f64], truth: &[f64], frame: usize, joint: usize, joints: usize) -> f64 {
    let i = (frame * joints + joint) * 3;
    let dx = pred[i] - truth[i];
    let dy = pred[i + 1] - truth[i + 1];
    let dz = pred[i + 2] - truth[i + 2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Mean per-joint position error in millimeters.
///
/// `horizons` are 1-based frame numbers into the prediction (horizon `h`
/// reads frame `h - 1`); an empty slice averages over every frame.
pub fn mpjpe(pred: &Tensor, truth: &Tensor, horizons: &[usize]) -> Result<f64> {
    let (frames, joints) = check_pair(pred, truth)?;
    let selected: Vec<usize> = if horizons.is_empty() {
        (0..frames).collect()
    } else {
        horizons
            .iter()
            .map(|&h| {
                if h == 0 || h > frames {
                    Err(HvisError::Parameter(format!("horizon frame {h} outside 1..={frames}")))
                } else {
                    Ok(h - 1)
                }
            })
            .collect::<Result<_>>()?
    };
    let (p, t) = (pred.values(), truth.values());
    let mut total = 0.0;
    for &f in &selected {
        for j in 0..joints {
            total += joint_distance(p, t, f, j, joints);
        }
    }
    Ok(total / (selected.len() * joints) as f64 * 1000.0)
}

/// Per-joint mean Euclidean error (millimeters) over all frames.
pub fn per_joint_error(pred: &Tensor, truth: &Tensor) -> Result<Vec<f64>> {
    let (frames, joints) = check_pair(pred, truth)?;
    let (p, t) = (pred.values(), truth.values());
    Ok((0..joints)
        .map(|j| (0..frames).map(|f| joint_distance(p, t, f, j, joints)).sum::<f64>() / frames as f64 * 1000.0)
        .collect())
}

/// Repeats the last observed frame `future` times.
pub fn zero_velocity_baseline(observed: &Tensor, future: usize) -> Result<Tensor> {
    let (frames, joints) = match *observed.shape() {
        [f, j, 3] if f >= 1 => (f, j),
        ref s => return Err(HvisError::dim("zero_velocity_baseline", format!("observed must be [frames>=1, joints, 3], got {s:?}"))),
    };
    if future == 0 {
        return Err(HvisError::Parameter("future length must be positive".into()));
    }
    let last = &observed.values()[(frames - 1) * joints * 3..];
    let vals = last.iter().copied().cycle().take(future * joints * 3).collect();
    Tensor::new(&[future, joints, 3], vals)
}

/// Converts a horizon in milliseconds to a frame count, `round(ms * fps / 1000)`.
pub fn horizon_frames(ms: f64, fps: f64) -> usize {
    (ms * fps / 1000.0).round() as usize
}
