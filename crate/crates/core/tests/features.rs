use std::f64::consts::PI;

use proptest::prelude::*;

use mimicmap::dsp::context::{append_deltas, append_deltas_adjoint, deltas, splice, splice_adjoint, SPLICE_CONTEXT};
use mimicmap::dsp::features::{featurize_utterance, FeatureKind, Utterance};
use mimicmap::dsp::stft::{frame_count, stft_log_magnitude, FRAME_LEN, HOP};
use mimicmap::nn::Matrix;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn pair() -> impl Strategy<Value = (Matrix, Matrix, f64, f64)> {
    (1usize..14, 1usize..6).prop_flat_map(|(t, d)| (matrix(t, d), matrix(t, d), -3.0f64..3.0, -3.0f64..3.0))
}

fn combine(a: f64, x: &Matrix, b: f64, y: &Matrix) -> Matrix {
    let mut out = x.map(|v| a * v);
    out.add_scaled(y, b).unwrap();
    out
}

fn assert_close(x: &Matrix, y: &Matrix) {
    assert_eq!(x.shape(), y.shape());
    for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
        assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs().max(q.abs())), "{p} vs {q}");
    }
}

fn dot(x: &Matrix, y: &Matrix) -> f64 {
    x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum()
}

proptest! {
    #[test]
    fn deltas_are_linear((x, y, a, b) in pair()) {
        assert_close(&append_deltas(&combine(a, &x, b, &y)), &combine(a, &append_deltas(&x), b, &append_deltas(&y)));
    }

    #[test]
    fn splice_is_linear((x, y, a, b) in pair()) {
        let f = |m: &Matrix| splice(m, SPLICE_CONTEXT);
        assert_close(&f(&combine(a, &x, b, &y)), &combine(a, &f(&x), b, &f(&y)));
    }

    #[test]
    fn adjoints_satisfy_the_inner_product_identity((x, _y, _a, _b) in pair(), seed in 0u64..1000) {
        let (t, d) = x.shape();
        let g_d = Matrix::from_vec(t, 3 * d, (0..t * 3 * d).map(|i| ((i as u64 * 7919 + seed) % 17) as f64 - 8.0).collect()).unwrap();
        let lhs = dot(&append_deltas(&x), &g_d);
        prop_assert!((lhs - dot(&x, &append_deltas_adjoint(&g_d))).abs() <= 1e-9 * (1.0 + lhs.abs()));
        let w = 2 * SPLICE_CONTEXT + 1;
        let g_s = Matrix::from_vec(t, w * d, (0..t * w * d).map(|i| ((i as u64 * 104_729 + seed) % 13) as f64 - 6.0).collect()).unwrap();
        let lhs = dot(&splice(&x, SPLICE_CONTEXT), &g_s);
        prop_assert!((lhs - dot(&x, &splice_adjoint(&g_s, SPLICE_CONTEXT))).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn delta_of_a_ramp_is_its_slope_away_from_edges() {
    // regression over ±2 frames recovers the slope of a linear sequence exactly
    let ramp = Matrix::from_vec(9, 1, (0..9).map(|t| 0.5 * t as f64 - 1.0).collect()).unwrap();
    let d = deltas(&ramp);
    for t in 2..7 {
        assert!((d.get(t, 0) - 0.5).abs() < 1e-12);
    }
    let flat = Matrix::from_vec(5, 2, vec![3.0; 10]).unwrap();
    assert!(deltas(&flat).as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn splice_replicates_edge_frames() {
    let m = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
    let s = splice(&m, SPLICE_CONTEXT);
    assert_eq!(s.row(0), &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
    assert_eq!(s.row(2), &[1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]);
}

#[test]
fn one_kilohertz_peaks_at_bin_32() {
    // 1000 Hz / (16000 Hz / 512 points) = bin 32
    let tone: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin()).collect();
    let logmag = stft_log_magnitude(&tone).unwrap();
    for t in 0..logmag.frames() {
        let row = logmag.values().row(t);
        let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(peak, 32, "frame {t}");
    }
}

#[test]
fn dimensional_chain_for_every_length() {
    assert_eq!(FeatureKind::Spliced.dim(), 257 * 3 * 11);
    for len in [FRAME_LEN, FRAME_LEN + 1, FRAME_LEN + HOP - 1, FRAME_LEN + HOP, 1_000, 4_321, 16_000] {
        let samples: Vec<f64> = (0..len).map(|n| ((n * 37) % 101) as f64 / 101.0 - 0.5).collect();
        let (spliced, logmag) = featurize_utterance(&Utterance::new("u", samples)).unwrap();
        let frames = 1 + (len - FRAME_LEN) / HOP;
        assert_eq!(frame_count(len), frames);
        assert_eq!(logmag.values().shape(), (frames, 257));
        assert_eq!(append_deltas(logmag.values()).shape(), (frames, 771));
        assert_eq!(spliced.values().shape(), (frames, 8481));
    }
    assert!(featurize_utterance(&Utterance::new("short", vec![0.0; FRAME_LEN - 1])).is_err());
}
