use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source coordinate and blend weight along one axis for align-corners-false
/// sampling: output centre `o + ½` maps to input centre `(o + ½)·n_in/n_out`.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Linear resampling of one axis of a row-major `[outer, n, inner]` block.
fn resample_axis(src: &[f64], outer: usize, n_in: usize, inner: usize, n_out: usize) -> Vec<f64> {
    let taps = taps(n_in, n_out);
    let mut out = Vec::with_capacity(outer * n_out * inner);
    for o in 0..outer {
        let base = o * n_in * inner;
        for &(lo, hi, t) in &taps {
            let a = &src[base + lo * inner..base + (lo + 1) * inner];
            let b = &src[base + hi * inner..base + (hi + 1) * inner];
            out.extend(a.iter().zip(b).map(|(&x, &y)| x * (1.0 - t) + y * t));
        }
    }
    out
}

/// Trilinear resize of an `[H, W, D]` volume to `target`, align-corners-false.
/// Returns the input unchanged when `target` equals the source grid.
pub fn resample(volume: &Tensor<f64>, target: [usize; 3]) -> Result<Tensor<f64>> {
    let [h, w, d] = match *volume.shape() {
        [h, w, d] => [h, w, d],
        ref s => return Err(Error::Shape(format!("resample expects [H, W, D], got {s:?}"))),
    };
    if target.contains(&0) {
        return Err(Error::invalid(format!("resample target {target:?} has a zero dimension")));
    }
    if [h, w, d] == target {
        return Ok(volume.clone());
    }
    let [th, tw, td] = target;
    let mut data = volume.data().to_vec();
    if d != td {
        data = resample_axis(&data, h * w, d, 1, td);
    }
    if w != tw {
        data = resample_axis(&data, h, w, td, tw);
    }
    if h != th {
        data = resample_axis(&data, 1, h, tw * td, th);
    }
    Tensor::new(target.to_vec(), data)
}

/// Linear map of intensities onto `[0, 1]`; constant volumes become zero.
pub fn normalize(volume: &Tensor<f64>) -> Tensor<f64> {
    let (lo, hi) = volume
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return volume.map(|_| 0.0);
    }
    volume.map(|v| (v - lo) / range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp_x(n: usize) -> Tensor<f64> {
        let data = (0..n * n * n).map(|i| (i / (n * n)) as f64 * 1.5 + 2.0).collect();
        Tensor::new(vec![n, n, n], data).unwrap()
    }

    #[test]
    fn identity_is_bitwise() {
        let v = Tensor::new(vec![2, 3, 4], (0..24).map(|i| (i as f64).sin()).collect()).unwrap();
        let r = resample(&v, [2, 3, 4]).unwrap();
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn constant_stays_constant() {
        let v = Tensor::full(vec![5, 4, 3], 0.7);
        let r = resample(&v, [8, 2, 7]).unwrap();
        assert!(r.data().iter().all(|&x| (x - 0.7).abs() < 1e-15));
    }

    #[test]
    fn downsampled_ramp_averages_pairs() {
        let v = ramp_x(4);
        let r = resample(&v, [2, 4, 4]).unwrap();
        for x in 0..2 {
            let expected = (v.at(&[2 * x, 0, 0]) + v.at(&[2 * x + 1, 0, 0])) / 2.0;
            for y in 0..4 {
                for z in 0..4 {
                    assert_abs_diff_eq!(r.at(&[x, y, z]), expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn axis_order_is_respected() {
        // varies only along depth
        let data = (0..2 * 2 * 4).map(|i| (i % 4) as f64).collect();
        let v = Tensor::new(vec![2, 2, 4], data).unwrap();
        let r = resample(&v, [2, 2, 2]).unwrap();
        assert_eq!(r.data(), &[0.5, 2.5, 0.5, 2.5, 0.5, 2.5, 0.5, 2.5]);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resample(&Tensor::zeros(vec![2, 2, 2]), [2, 0, 2]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let v = Tensor::new(vec![3], vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(normalize(&v).data(), &[0.0, 0.5, 1.0]);
        let c = Tensor::full(vec![4], 7.0);
        assert_eq!(normalize(&c).data(), &[0.0; 4]);
        let unit = Tensor::new(vec![3], vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize(&unit).data(), unit.data());
    }

    proptest! {
        #[test]
        fn resample_is_idempotent(
            dims in prop::array::uniform3(1usize..6),
            target in prop::array::uniform3(1usize..6),
            seed in 0u64..1000,
        ) {
            let n = dims.iter().product::<usize>();
            let data = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0).collect();
            let v = Tensor::new(dims.to_vec(), data).unwrap();
            let once = resample(&v, target).unwrap();
            let twice = resample(&once, target).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-6);
        }

        #[test]
        fn resample_stays_within_input_range(
            dims in prop::array::uniform3(1usize..6),
            target in prop::array::uniform3(1usize..9),
        ) {
            let n = dims.iter().product::<usize>();
            let data: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64).collect();
            let (lo, hi) = data.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            let v = Tensor::new(dims.to_vec(), data).unwrap();
            let r = resample(&v, target).unwrap();
            prop_assert!(r.data().iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
        }
    }
}
