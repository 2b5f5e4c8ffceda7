use gloflow::graph::{build_neighborhood, GraphConfig};
use gloflow::io::{read_coords_csv, read_frames, read_manifest, read_steps_csv, write_dataset, Manifest, COORDS_FILE, MANIFEST_FILE, STEPS_FILE};
use gloflow::pairwise::{run_stage_one, LkPairParams, PairwiseEstimator};
use gloflow::pipeline::{run_method, simulate, Method, RunOptions};
use gloflow::simulator::{synthetic_tissue, SimConfig};
use gloflow::types::RNG_NAME;
use gloflow::GrayImage;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        patch: 192,
        mag_range: (9.0, 12.0),
        ..Default::default()
    }
}

#[test]
fn strided_lk_survives_failed_pairs() {
    let src = synthetic_tissue(900, 700, 1);
    for seed in 0..4 {
        let (seq, _) = simulate(&src, "t", &small(seed)).unwrap();
        let a = run_stage_one(&seq.frames, &PairwiseEstimator::Lk(LkPairParams::default()), 20).unwrap();
        assert_eq!(a.retained.len(), (seq.len() - 1) / 20 + 1);
        assert_eq!(a.steps.len(), a.retained.len() - 1);
        assert!(a.steps.iter().all(|s| s.is_finite()));
        assert!(a.per_step_confidence.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn neighborhood_links_rows() {
    let src = synthetic_tissue(900, 700, 2);
    let (seq, plan) = simulate(&src, "t", &small(3)).unwrap();
    assert!(plan.row_count() >= 2);
    let g = build_neighborhood(&seq.truth_coords, 192, &GraphConfig::default()).unwrap();
    for i in 1..seq.len() {
        assert!(g.contains(i - 1, i), "{} and {i} not linked", i - 1);
    }
    for i in 0..seq.len() {
        let row = plan.rows[i.saturating_sub(1)];
        let other_row = g.neighbors(i).iter().any(|&j| plan.rows[j.saturating_sub(1)] != row);
        assert!(other_row, "frame {i} has no neighbor in another row");
    }
}

#[test]
fn dataset_round_trip() {
    let src = synthetic_tissue(600, 500, 3);
    let cfg = small(4);
    let (seq, plan) = simulate(&src, "t", &cfg).unwrap();
    let manifest = Manifest {
        seed: cfg.seed,
        realization: plan.realization,
        config: cfg,
        patch: cfg.patch,
        source_id: "t".into(),
        source_width: 600,
        source_height: 500,
        n_frames: seq.len(),
        rng: RNG_NAME.into(),
    };
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &seq, &manifest).unwrap();

    let frames = read_frames(dir.path()).unwrap();
    assert_eq!(frames.len(), seq.len());
    for (a, b) in frames.iter().zip(&seq.frames) {
        let quantized = GrayImage::from_u8(b.width(), b.height(), &b.to_u8()).unwrap();
        assert_eq!(a, &quantized);
    }
    assert_eq!(read_steps_csv(dir.path().join(STEPS_FILE)).unwrap(), seq.truth_steps);
    let (idx, coords) = read_coords_csv(dir.path().join(COORDS_FILE)).unwrap();
    assert_eq!(idx, (0..seq.len()).collect::<Vec<_>>());
    assert_eq!(coords, seq.truth_coords);
    assert_eq!(read_manifest(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn every_method_runs_on_quantized_frames() {
    let src = synthetic_tissue(700, 600, 4);
    let (seq, _) = simulate(&src, "t", &small(5)).unwrap();
    let frames: Vec<GrayImage> = seq
        .frames
        .iter()
        .map(|f| GrayImage::from_u8(f.width(), f.height(), &f.to_u8()).unwrap())
        .collect();
    let flows = seq
        .truth_steps
        .chunks(4)
        .take((seq.len() - 1) / 4)
        .map(|c| gloflow::pairwise::PairEstimate {
            translation: c.iter().fold(gloflow::Translation2D::ZERO, |a, &t| a + t),
            confidence: 1.0,
        })
        .collect();
    let opts = RunOptions {
        stride: 4,
        flows: Some(flows),
        ..Default::default()
    };
    for m in Method::ALL {
        let out = run_method(&frames, m, &opts).unwrap();
        let r = out.evaluate(&seq.truth_coords).unwrap();
        assert!(r.re_epe.is_finite(), "{m}");
        assert_eq!(r.epe_pairwise.is_some(), m.is_pairwise(), "{m}");
        if m == Method::GloflowExternal {
            assert!(r.re_epe < 1.0, "{m}: {}", r.re_epe);
        }
    }
}
