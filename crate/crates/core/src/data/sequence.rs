use std::fs;
use std::io::Write;
use std::path::Path;

use super::skeleton::SkeletonSpec;
use crate::autodiff::Tensor;
use crate::error::{HvisError, Result};

/// Joint positions in meters, `[frames, joints, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    positions: Tensor,
    fps: f64,
    pub label: Option<String>,
}

impl MotionSequence {
    pub fn new(positions: Tensor, fps: f64) -> Result<Self> {
        if positions.shape().len() != 3 || positions.shape()[2] != 3 {
            return Err(HvisError::dim("motion_sequence", format!("positions must be [frames, joints, 3], got {:?}", positions.shape())));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(HvisError::Parameter(format!("fps must be positive, got {fps}")));
        }
        if !positions.is_finite() {
            return Err(HvisError::Contract("positions contain non-finite values".into()));
        }
        Ok(MotionSequence { positions, fps, label: None })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn frames(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    /// `joints * 3` coordinates of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let stride = self.joints() * 3;
        &self.positions.values()[t * stride..(t + 1) * stride]
    }

    /// Consecutive frames `start..start+len` as a `[len, joints, 3]` tensor.
    pub fn slice_frames(&self, start: usize, len: usize) -> Tensor {
        let stride = self.joints() * 3;
        let vals = self.positions.values()[start * stride..(start + len) * stride].to_vec();
        Tensor::new(&[len, self.joints(), 3], vals).expect("in-range slice")
    }

    /// Translates every frame so `root` sits at the origin.
    pub fn root_aligned(&self, root: usize) -> MotionSequence {
        let n = self.joints();
        let mut vals = self.positions.values().to_vec();
        for frame in vals.chunks_mut(n * 3) {
            let r = [frame[root * 3], frame[root * 3 + 1], frame[root * 3 + 2]];
            for joint in frame.chunks_mut(3) {
                for c in 0..3 {
                    joint[c] -= r[c];
                }
            }
        }
        MotionSequence {
            positions: Tensor::new(self.positions.shape(), vals).expect("same shape"),
            fps: self.fps,
            label: self.label.clone(),
        }
    }
}

/// Keeps every `round(fps / target_fps)`-th frame and relabels the rate.
pub fn downsample(seq: &MotionSequence, target_fps: f64) -> Result<MotionSequence> {
    if !(target_fps > 0.0) || target_fps > seq.fps() {
        return Err(HvisError::Parameter(format!(
            "target fps {target_fps} must be positive and at most the source rate {}",
            seq.fps()
        )));
    }
    let stride = ((seq.fps() / target_fps).round() as usize).max(1);
    let kept: Vec<usize> = (0..seq.frames()).step_by(stride).collect();
    let mut vals = Vec::with_capacity(kept.len() * seq.joints() * 3);
    for &t in &kept {
        vals.extend_from_slice(seq.frame(t));
    }
    let positions = Tensor::new(&[kept.len(), seq.joints(), 3], vals)?;
    Ok(MotionSequence { positions, fps: target_fps, label: seq.label.clone() })
}

fn header(skeleton: &SkeletonSpec) -> Vec<String> {
    let mut cols = vec!["frame".to_string()];
    for name in skeleton.names() {
        for axis in ["x", "y", "z"] {
            cols.push(format!("{name}_{axis}"));
        }
    }
    cols
}

/// Rows of a parsed CSV along with the `predicted` flags when that column is present.
#[derive(Debug)]
pub struct CsvMotion {
    pub sequence: MotionSequence,
    pub predicted: Option<Vec<bool>>,
}

/// Reads `frame,<joint>_x,<joint>_y,<joint>_z,...` with an optional `# fps=<rate>`
/// comment. `fps_override` wins over the comment.
pub fn load_csv(path: &Path, skeleton: &SkeletonSpec, fps_override: Option<f64>) -> Result<MotionSequence> {
    Ok(load_csv_full(path, skeleton, fps_override)?.sequence)
}

pub fn load_csv_full(path: &Path, skeleton: &SkeletonSpec, fps_override: Option<f64>) -> Result<CsvMotion> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, skeleton, fps_override)
}

pub fn parse_csv(text: &str, skeleton: &SkeletonSpec, fps_override: Option<f64>) -> Result<CsvMotion> {
    let mut fps_comment = None;
    for line in text.lines().take_while(|l| l.trim_start().starts_with('#')) {
        let body = line.trim_start().trim_start_matches('#').trim();
        if let Some(v) = body.strip_prefix("fps=") {
            let v = v.trim();
            fps_comment = Some(v.parse::<f64>().map_err(|_| HvisError::Format(format!("bad fps comment {v:?}")))?);
        }
    }
    let fps = fps_override
        .or(fps_comment)
        .ok_or_else(|| HvisError::Format("no `# fps=<rate>` comment and no fps override".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let expected = header(skeleton);
    let got: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let has_flag = got.last().map(String::as_str) == Some("predicted");
    let data_cols = if has_flag { got.len() - 1 } else { got.len() };
    if data_cols != expected.len() {
        return Err(HvisError::Format(format!(
            "expected {} columns (frame + {} coordinates), found {}",
            expected.len(),
            expected.len() - 1,
            data_cols
        )));
    }
    if let Some((i, (e, g))) = expected.iter().zip(&got).enumerate().find(|(_, (e, g))| e != g) {
        return Err(HvisError::Format(format!("column {} is {g:?}, expected {e:?}", i + 1)));
    }

    let n = skeleton.joint_count();
    let mut vals = Vec::new();
    let mut flags = Vec::new();
    let mut frames = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = row + 2;
        if record.len() != got.len() {
            return Err(HvisError::Format(format!("row {row_no}: expected {} cells, found {}", got.len(), record.len())));
        }
        for (col, cell) in record.iter().enumerate().take(data_cols).skip(1) {
            let v: f64 = cell.parse().map_err(|_| HvisError::Parse {
                row: row_no,
                column: col + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(HvisError::Parse { row: row_no, column: col + 1, message: format!("non-finite value {cell:?}") });
            }
            vals.push(v);
        }
        if has_flag {
            flags.push(matches!(record.get(data_cols), Some("1") | Some("true")));
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(HvisError::Format("no data rows".into()));
    }
    let sequence = MotionSequence::new(Tensor::new(&[frames, n, 3], vals)?, fps)?;
    Ok(CsvMotion { sequence, predicted: has_flag.then_some(flags) })
}

/// Writes the CSV schema read by [`load_csv`]. When `predicted_from` is set,
/// a trailing `predicted` column flags frames at or after that index.
pub fn write_csv<W: Write>(out: W, seq: &MotionSequence, skeleton: &SkeletonSpec, predicted_from: Option<usize>) -> Result<()> {
    if seq.joints() != skeleton.joint_count() {
        return Err(HvisError::Contract(format!(
            "sequence has {} joints, skeleton has {}",
            seq.joints(),
            skeleton.joint_count()
        )));
    }
    let mut out = out;
    writeln!(out, "# fps={}", seq.fps())?;
    let mut w = csv::Writer::from_writer(out);
    let mut cols = header(skeleton);
    if predicted_from.is_some() {
        cols.push("predicted".into());
    }
    w.write_record(&cols)?;
    for t in 0..seq.frames() {
        let mut rec = vec![t.to_string()];
        rec.extend(seq.frame(t).iter().map(|v| v.to_string()));
        if let Some(p) = predicted_from {
            rec.push(if t >= p { "1" } else { "0" }.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(path: &Path, seq: &MotionSequence, skeleton: &SkeletonSpec) -> Result<()> {
    let file = fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), seq, skeleton, None)
}
