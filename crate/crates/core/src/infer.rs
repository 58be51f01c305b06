//! Sliding-window prediction over whole videos.
//!
//! Frame `t` (0-based) is predicted from frames `t-T+1..=t`. The first `T-1`
//! frames lack that history and use the reversed clip `t+T-1, ..., t`
//! instead, so every window still ends at the frame being predicted. Videos
//! shorter than `2T-1` frames are first looped cyclically.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::ops::Mode;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    /// 0-based source frame indices, in clip order.
    pub frames: Vec<usize>,
    pub reversed: bool,
}

/// One window per output frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowPlan {
    pub clip_len: usize,
    pub windows: Vec<Window>,
}

pub fn min_frames(clip_len: usize) -> usize {
    2 * clip_len - 1
}

pub fn plan_windows(n: usize, clip_len: usize) -> Result<WindowPlan> {
    if clip_len == 0 {
        return Err(Error::InvalidArgument("clip length must be at least 1".into()));
    }
    if n < min_frames(clip_len) {
        return Err(Error::InvalidArgument(format!(
            "{n} frames is fewer than 2T-1 = {} for T = {clip_len}; loop the video first (loop_video)",
            min_frames(clip_len)
        )));
    }
    let windows = (0..n)
        .map(|t| {
            if t + 1 < clip_len {
                Window {
                    frames: (t..t + clip_len).rev().collect(),
                    reversed: true,
                }
            } else {
                Window {
                    frames: (t + 1 - clip_len..=t).collect(),
                    reversed: false,
                }
            }
        })
        .collect();
    Ok(WindowPlan { clip_len, windows })
}

/// Repeats `frames` from the start until there are at least `2T-1` of them.
pub fn loop_video<F: Clone>(frames: &[F], clip_len: usize) -> Result<Vec<F>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("cannot loop an empty video".into()));
    }
    let need = min_frames(clip_len.max(1)).max(frames.len());
    Ok(frames.iter().cycle().take(need).cloned().collect())
}

/// Stacks `(3, H, W)` frames at `indices` into a `(1, 3, T, H, W)` clip.
pub fn assemble_clip(frames: &[Tensor], indices: &[usize]) -> Result<Tensor> {
    let first = frames
        .get(indices[0])
        .ok_or_else(|| Error::InvalidArgument(format!("frame index {} out of range", indices[0])))?;
    let [c, h, w] = <[usize; 3]>::try_from(first.shape()).map_err(|_| Error::InvalidShape {
        op: "assemble_clip",
        detail: format!("frames must be (3, H, W), got {:?}", first.shape()),
    })?;
    let t = indices.len();
    let plane = h * w;
    let mut data = vec![0.0; c * t * plane];
    for (ti, &idx) in indices.iter().enumerate() {
        let f = frames
            .get(idx)
            .ok_or_else(|| Error::InvalidArgument(format!("frame index {idx} out of range")))?;
        first.check_same_shape("assemble_clip", f)?;
        for ch in 0..c {
            data[(ch * t + ti) * plane..][..plane].copy_from_slice(&f.data()[ch * plane..][..plane]);
        }
    }
    Tensor::from_vec(vec![1, c, t, h, w], data)
}

/// Concatenates `(1, ...)` tensors along the batch axis.
pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?;
    let mut shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.len() * items.len());
    for it in items {
        first.check_same_shape("stack_batch", it)?;
        data.extend_from_slice(it.data());
    }
    shape[0] = items.len() * first.shape()[0];
    Tensor::from_vec(shape, data)
}

/// Eval-mode prediction of a set of windows, `batch` windows per forward
/// pass, batches run in parallel. Returns `(H, W)` maps in `windows` order.
pub fn predict_windows(net: &Network, frames: &[Tensor], windows: &[Window], batch: usize) -> Result<Vec<Tensor>> {
    let [h, w] = net.config().input_size;
    let per_batch: Vec<Vec<Tensor>> = windows
        .par_chunks(batch.max(1))
        .map(|chunk| {
            let clips = chunk
                .iter()
                .map(|win| assemble_clip(frames, &win.frames))
                .collect::<Result<Vec<_>>>()?;
            let out = net.forward(&stack_batch(&clips)?, Mode::Eval)?;
            Ok(out
                .data()
                .chunks_exact(h * w)
                .map(|m| Tensor::from_vec(vec![h, w], m.to_vec()).expect("map shape"))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// One `(H, W)` map per input frame. Frames are `(3, H, W)` preprocessed
/// tensors; short videos are looped and only the first `N` maps kept.
pub fn predict_video(net: &Network, frames: &[Tensor]) -> Result<Vec<Tensor>> {
    let n = frames.len();
    let clip_len = net.config().clip_len;
    let looped = loop_video(frames, clip_len)?;
    let plan = plan_windows(looped.len(), clip_len)?;
    predict_windows(net, &looped, &plan.windows[..n], 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_case_63_32() {
        let plan = plan_windows(63, 32).unwrap();
        assert_eq!(plan.windows.len(), 63);
        assert_eq!(plan.windows[31].frames, (0..32).collect::<Vec<_>>());
        assert_eq!(plan.windows[0].frames, (0..32).rev().collect::<Vec<_>>());
        assert!(plan.windows[0].reversed);
        assert_eq!(plan.windows[62].frames, (31..63).collect::<Vec<_>>());
        assert!(plan_windows(62, 32).unwrap_err().to_string().contains("loop_video"));
    }

    #[test]
    fn small_plan_directions() {
        let plan = plan_windows(7, 4).unwrap();
        for (t, win) in plan.windows.iter().enumerate() {
            assert_eq!(win.reversed, t < 3);
            assert_eq!(win.frames.len(), 4);
            assert_eq!(*win.frames.last().unwrap(), t);
        }
        assert_eq!(plan.windows[1].frames, [4, 3, 2, 1]);
        let unit = plan_windows(3, 1).unwrap();
        assert!(unit.windows.iter().enumerate().all(|(t, w)| w.frames == [t] && !w.reversed));
    }

    #[test]
    fn looping() {
        assert_eq!(loop_video(&[1, 2, 3, 4, 5], 4).unwrap(), [1, 2, 3, 4, 5, 1, 2]);
        assert_eq!(loop_video(&[9], 4).unwrap(), [9; 7]);
        let long: Vec<i32> = (0..10).collect();
        assert_eq!(loop_video(&long, 4).unwrap(), long);
        assert!(loop_video::<i32>(&[], 4).is_err());
    }

    #[test]
    fn consecutive_forward_windows_overlap() {
        let plan = plan_windows(20, 5).unwrap();
        for t in 4..19 {
            let a = &plan.windows[t].frames;
            let b = &plan.windows[t + 1].frames;
            assert_eq!(a[1..], b[..4]);
        }
    }

    #[test]
    fn assemble_places_frames_on_time_axis() {
        let frames: Vec<Tensor> = (0..3).map(|i| Tensor::full(vec![3, 2, 2], i as f64)).collect();
        let clip = assemble_clip(&frames, &[2, 0]).unwrap();
        assert_eq!(clip.shape(), [1, 3, 2, 2, 2]);
        assert_eq!(clip.get(&[0, 1, 0, 1, 1]), 2.0);
        assert_eq!(clip.get(&[0, 2, 1, 0, 0]), 0.0);
    }
}
