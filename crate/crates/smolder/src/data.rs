//! Bridging between the ndarray-based dataset types and burn tensors.

use burn::tensor::backend::Backend;
use burn::tensor::{Tensor, TensorData};
use ndarray::{Array2, Array3};

use smolder_core::mask::BinaryMask;

/// Pack clip frames (each (H, W, 3) in [0,1]) into (1, 3, T, H, W) data.
pub fn clip_to_data(frames: &[Array3<f32>]) -> TensorData {
    let t = frames.len();
    let (h, w, _) = frames[0].dim();
    let mut buf = vec![0.0f32; 3 * t * h * w];
    for (ti, frame) in frames.iter().enumerate() {
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    buf[((ch * t + ti) * h + r) * w + c] = frame[[r, c, ch]];
                }
            }
        }
    }
    TensorData::new(buf, [1, 3, t, h, w])
}

/// A binary mask as (1, H, W) float data.
pub fn mask_to_data(mask: &BinaryMask) -> TensorData {
    let (h, w) = mask.dims();
    let mut buf = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                buf[r * w + c] = 1.0;
            }
        }
    }
    TensorData::new(buf, [1, h, w])
}

/// Convert a (H, W) probability tensor back to an ndarray grid.
pub fn tensor_to_array2<B: Backend>(t: Tensor<B, 2>) -> Array2<f32> {
    let [h, w] = t.dims();
    let values = t.into_data().into_vec::<f32>().expect("f32 tensor");
    Array2::from_shape_vec((h, w), values).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use burn::backend::NdArray;

    type B = NdArray<f32>;

    #[test]
    fn clip_layout_is_channel_time_major() {
        let mut f0 = Array3::zeros((2, 3, 3));
        let mut f1 = Array3::zeros((2, 3, 3));
        f0[[1, 2, 0]] = 0.5; // red at (r=1, c=2) in frame 0
        f1[[0, 1, 2]] = 0.9; // blue at (r=0, c=1) in frame 1
        let data = clip_to_data(&[f0, f1]);
        let device = Default::default();
        let t = Tensor::<B, 5>::from_data(data, &device);
        assert_eq!(t.dims(), [1, 1 + 2, 2, 2, 3]);
        let v = |ch: usize, ti: usize, r: usize, c: usize| {
            t.clone()
                .slice([0..1, ch..ch + 1, ti..ti + 1, r..r + 1, c..c + 1])
                .into_scalar()
        };
        assert_eq!(v(0, 0, 1, 2), 0.5);
        assert_eq!(v(2, 1, 0, 1), 0.9);
        assert_eq!(v(0, 1, 1, 2), 0.0);
    }

    #[test]
    fn mask_round_trip() {
        let m = BinaryMask::from_fn(4, 5, |r, c| r + c == 4);
        let device = Default::default();
        let t = Tensor::<B, 3>::from_data(mask_to_data(&m), &device).reshape([4, 5]);
        let arr = tensor_to_array2(t);
        for r in 0..4 {
            for c in 0..5 {
                assert_eq!(arr[[r, c]] > 0.5, m.get(r, c));
            }
        }
    }
}
