use serde::{Deserialize, Serialize};

use super::{PhoneSegment, Posteriorgram};
use crate::error::{Error, Result};

/// Segment-level pronunciation statistics for one phone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GopRecord {
    /// Mean log posterior of the canonical phone over the segment.
    pub lpp: f64,
    /// `lpp - max_q LPP(q)`, always `<= 0`.
    pub gop: f64,
    /// `exp(gop)`, in `(0, 1]`.
    pub normalized: f64,
}

fn check(post: &Posteriorgram, seg: &PhoneSegment) -> Result<()> {
    seg.check_bounds(post.frames())?;
    if seg.phone >= post.num_phones() {
        return Err(Error::Input(format!(
            "phone id {} not in 0..{}",
            seg.phone,
            post.num_phones()
        )));
    }
    Ok(())
}

/// LPP of every phone in the set over the segment's frames.
pub fn segment_lpps(post: &Posteriorgram, seg: &PhoneSegment) -> Result<Vec<f64>> {
    seg.check_bounds(post.frames())?;
    let q = post.num_phones();
    let mut acc = vec![0.0; q];
    for t in seg.start..seg.end {
        for (a, v) in acc.iter_mut().zip(post.log_post().row(t)) {
            *a += v;
        }
    }
    let n = seg.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean per-frame log posterior of the segment's phone.
pub fn compute_lpp(post: &Posteriorgram, seg: &PhoneSegment) -> Result<f64> {
    check(post, seg)?;
    let lp = post.log_post();
    let sum: f64 = (seg.start..seg.end).map(|t| lp.at(t, seg.phone)).sum();
    Ok(sum / seg.len() as f64)
}

pub fn compute_gop(post: &Posteriorgram, seg: &PhoneSegment) -> Result<GopRecord> {
    check(post, seg)?;
    let lpps = segment_lpps(post, seg)?;
    let lpp = lpps[seg.phone];
    let best = lpps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gop = lpp - best;
    Ok(GopRecord {
        lpp,
        gop,
        normalized: normalize_gop(gop)?,
    })
}

/// Maps a raw GOP (`<= 0`) into `(0, 1]` via `exp`.
pub fn normalize_gop(gop: f64) -> Result<f64> {
    if gop > 0.0 || gop.is_nan() {
        return Err(Error::Contract(format!("GOP must be <= 0, got {gop}")));
    }
    Ok(gop.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn post_from_probs(rows: &[Vec<f64>]) -> Posteriorgram {
        let q = rows[0].len();
        let logs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        Posteriorgram::new(
            Tensor::from_rows(&logs, q).unwrap(),
            Tensor::zeros(&[rows.len(), 1]),
        )
        .unwrap()
    }

    fn seg(phone: usize, start: usize, end: usize) -> PhoneSegment {
        PhoneSegment {
            phone,
            word: 0,
            start,
            end,
        }
    }

    #[test]
    fn certain_phone_has_zero_lpp() {
        let post = post_from_probs(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(compute_lpp(&post, &seg(0, 0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn lpp_is_frame_mean() {
        let lp = Tensor::from_rows(
            &[
                vec![-1.0, (1.0 - (-1.0f64).exp()).ln()],
                vec![-3.0, (1.0 - (-3.0f64).exp()).ln()],
            ],
            2,
        )
        .unwrap();
        let post = Posteriorgram::new(lp, Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(compute_lpp(&post, &seg(0, 0, 2)).unwrap(), -2.0);
    }

    #[test]
    fn argmax_phone_has_zero_gop() {
        let post = post_from_probs(&[vec![0.7, 0.2, 0.1], vec![0.6, 0.3, 0.1]]);
        let rec = compute_gop(&post, &seg(0, 0, 2)).unwrap();
        assert_eq!(rec.gop, 0.0);
        assert_eq!(rec.normalized, 1.0);
        assert!(compute_gop(&post, &seg(1, 0, 2)).unwrap().gop < 0.0);
    }

    #[test]
    fn gop_is_difference_to_best_competitor() {
        let lp = Tensor::from_rows(&[vec![-2.3, -0.5]], 2).unwrap();
        let post = Posteriorgram::new(lp, Tensor::zeros(&[1, 1])).unwrap();
        let rec = compute_gop(&post, &seg(0, 0, 1)).unwrap();
        assert!((rec.gop - (-1.8)).abs() < 1e-15);
    }

    #[test]
    fn invalid_phone_id() {
        let post = post_from_probs(&[vec![0.5, 0.5]]);
        assert!(matches!(compute_lpp(&post, &seg(2, 0, 1)), Err(Error::Input(_))));
        assert!(matches!(compute_gop(&post, &seg(2, 0, 1)), Err(Error::Input(_))));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_gop(0.0).unwrap(), 1.0);
        assert_eq!(normalize_gop(f64::NEG_INFINITY).unwrap(), 0.0);
        assert!((normalize_gop(-1.8).unwrap() - 0.165_298_888_221_586_5).abs() < 1e-15);
        assert!(normalize_gop(0.1).is_err());
    }
}
