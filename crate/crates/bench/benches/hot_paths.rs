//! Hot-path benchmarks: per-frame fitting, pose estimation, landmark
//! retargeting with occlusion checks, and rasterization.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use nalgebra::{Matrix3, Rotation3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use facemorph_core::camera::{estimate_pose, LandmarkSet, Pose};
use facemorph_core::fitting::{fit, FitConfig, FitResult};
use facemorph_core::model::{synthesize_test_model, MorphableModel};
use facemorph_core::render::rasterize;
use facemorph_core::transform::transform_landmarks;

struct Scene {
    model: MorphableModel,
    observed: LandmarkSet,
    fit_ref: FitResult,
    fit_drive: FitResult,
}

fn scene() -> Scene {
    let model = synthesize_test_model(42, 600, 8, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut face = |yaw: f64| -> LandmarkSet {
        let alpha: Vec<f64> =
            model.shape_sigma.iter().map(|s| s * (rng.random::<f64>() - 0.5)).collect();
        let beta: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 0.6 - 0.3).collect();
        let pose = Pose {
            rotation: Rotation3::from_euler_angles(0.0, yaw, 0.0).into_inner(),
            translation: Vector2::new(128.0, 128.0),
            scale: 95.0,
        };
        let mesh = model.evaluate_mesh(&alpha, &beta).unwrap();
        let pts: Vec<[f64; 2]> = model
            .landmark_positions(&mesh)
            .iter()
            .map(|&p| pose.project_point(p).0)
            .collect();
        LandmarkSet::new(pts, 256, 256, None).unwrap()
    };
    let observed = face(0.15);
    let reference = face(-0.1);
    let config = FitConfig::default();
    let fit_ref = fit(&model, &reference, &config).unwrap();
    let fit_drive = fit(&model, &observed, &config).unwrap();
    Scene { model, observed, fit_ref, fit_drive }
}

fn bench_fit(c: &mut Criterion) {
    let s = scene();
    let config = FitConfig::default();
    c.bench_function("fit_frame_600v_8+6modes", |b| {
        b.iter(|| fit(black_box(&s.model), black_box(&s.observed), &config).unwrap())
    });
}

fn bench_estimate_pose(c: &mut Criterion) {
    let s = scene();
    let mesh = s
        .model
        .evaluate_mesh(&s.fit_drive.shape_coeffs, &s.fit_drive.expr_coeffs)
        .unwrap();
    let pts3d = s.model.landmark_positions(&mesh);
    let pts2d = s.observed.points.clone();
    c.bench_function("estimate_pose_68pts", |b| {
        b.iter(|| estimate_pose(black_box(&pts3d), black_box(&pts2d), None).unwrap())
    });
}

fn bench_transform(c: &mut Criterion) {
    let s = scene();
    c.bench_function("transform_frame_no_occlusion", |b| {
        b.iter(|| {
            transform_landmarks(
                black_box(&s.model),
                black_box(&s.fit_ref),
                black_box(&s.fit_drive),
                false,
            )
            .unwrap()
        })
    });
    c.bench_function("transform_frame_with_occlusion", |b| {
        b.iter(|| {
            transform_landmarks(
                black_box(&s.model),
                black_box(&s.fit_ref),
                black_box(&s.fit_drive),
                true,
            )
            .unwrap()
        })
    });
}

fn bench_rasterize(c: &mut Criterion) {
    let s = scene();
    let mesh = s
        .model
        .evaluate_mesh(&s.fit_ref.shape_coeffs, &s.fit_drive.expr_coeffs)
        .unwrap();
    let pose = Pose {
        rotation: Matrix3::identity(),
        translation: Vector2::new(128.0, 128.0),
        scale: 95.0,
    };
    c.bench_function("rasterize_256px_untextured", |b| {
        b.iter(|| rasterize(black_box(&mesh), &pose, 256, 256, None))
    });
}

criterion_group!(benches, bench_fit, bench_estimate_pose, bench_transform, bench_rasterize);
criterion_main!(benches);
