use std::collections::HashMap;

use dsnet_core::fusion::FusionPolicy;
use dsnet_core::metrics::panoptic_quality;
use dsnet_core::pipeline::{segment_frame, Algorithm, FrameInput};
use dsnet_core::synth::{generate_scene, simulate_regressed_centers, NoiseModel, Scene, SceneSpec};
use dsnet_core::{ClassConfig, PanopticLabeling};

fn noiseless(seed: u64) -> SceneSpec {
    SceneSpec {
        noise: NoiseModel::NONE,
        ..SceneSpec::mixed_size(seed)
    }
}

fn run(scene: &Scene, noise: &NoiseModel, algorithm: &Algorithm) -> PanopticLabeling {
    let classes = ClassConfig::synthetic();
    let reg = simulate_regressed_centers(scene, noise, 7);
    let pos = scene.frame.positions();
    let input = FrameInput {
        points: &pos,
        semantic: scene.frame.semantic.as_deref().unwrap(),
        centers: &reg.centers,
        features: None,
    };
    segment_frame(&input, &classes, algorithm, None, &FusionPolicy::for_classes(&classes)).unwrap()
}

#[test]
fn exact_centers_recover_every_instance() {
    let classes = ClassConfig::synthetic();
    for seed in 0..3 {
        let scene = generate_scene(&noiseless(seed)).unwrap();
        let pred = run(&scene, &NoiseModel::NONE, &Algorithm::mean_shift(0.2));
        let gt = scene.frame.instance.as_deref().unwrap();
        let sem = scene.frame.semantic.as_deref().unwrap();
        // every predicted instance lies inside one gt instance and vice versa
        let mut p2g = HashMap::new();
        let mut g2p = HashMap::new();
        let mut gt_size: HashMap<u32, usize> = HashMap::new();
        for i in 0..pred.len() {
            if classes.is_things(sem[i]) && gt[i] > 0 {
                *gt_size.entry(gt[i]).or_default() += 1;
            }
            if pred.instance[i] == 0 {
                continue;
            }
            assert_eq!(*p2g.entry(pred.instance[i]).or_insert(gt[i]), gt[i], "seed {seed}");
            assert_eq!(*g2p.entry(gt[i]).or_insert(pred.instance[i]), pred.instance[i], "seed {seed}");
        }
        let kept = gt_size.values().filter(|&&n| n >= classes.min_instance_points).count();
        assert_eq!(p2g.len(), kept, "seed {seed}");
        assert_eq!(pred.semantic, sem);
    }
}

#[test]
fn segmentation_is_deterministic() {
    let spec = SceneSpec::mixed_size(11);
    let scene = generate_scene(&spec).unwrap();
    for algo in [Algorithm::mean_shift(1.2), Algorithm::mean_shift(0.65)] {
        assert_eq!(run(&scene, &spec.noise, &algo), run(&scene, &spec.noise, &algo));
    }
}

#[test]
fn regression_noise_costs_panoptic_quality() {
    let classes = ClassConfig::synthetic();
    let (mut clean, mut noisy, mut gts) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..4 {
        let spec = SceneSpec::mixed_size(seed);
        let scene = generate_scene(&spec).unwrap();
        clean.push(run(&scene, &NoiseModel::NONE, &Algorithm::mean_shift(0.65)));
        noisy.push(run(&scene, &spec.noise, &Algorithm::mean_shift(0.65)));
        let f = &scene.frame;
        gts.push(PanopticLabeling::new(f.semantic.clone().unwrap(), f.instance.clone().unwrap()).unwrap());
    }
    let clean = panoptic_quality(&clean, &gts, &classes).unwrap();
    let noisy = panoptic_quality(&noisy, &gts, &classes).unwrap();
    assert!(clean.pq_th > noisy.pq_th, "{} vs {}", clean.pq_th, noisy.pq_th);
    assert_eq!(clean.miou, 1.0);
}
