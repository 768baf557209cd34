use cocoa_core::batching::WindowedDataset;
use cocoa_core::synth::{generate, SynthConfig};

/// Per-channel DFT magnitudes of one window, which ignore circular shifts.
fn dft_magnitudes(ds: &WindowedDataset, m: usize, i: usize) -> Vec<f64> {
    let spec = &ds.modalities()[m];
    let (t_len, c) = (spec.window, spec.channels);
    let x = &ds.modality_data(m)[i * t_len * c..(i + 1) * t_len * c];
    let mut out = Vec::new();
    for ch in 0..c {
        for k in 0..=t_len / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for t in 0..t_len {
                let angle = -2.0 * std::f64::consts::PI * (k * t) as f64 / t_len as f64;
                re += x[t * c + ch] * angle.cos();
                im += x[t * c + ch] * angle.sin();
            }
            out.push((re * re + im * im).sqrt());
        }
    }
    out
}

/// Leave-one-out 1-NN accuracy; ties go to the lowest index.
fn loo_accuracy(features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut correct = 0;
    for i in 0..features.len() {
        let mut best = (f64::INFINITY, 0);
        for j in 0..features.len() {
            if i == j {
                continue;
            }
            let d: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        correct += usize::from(labels[best.1] == labels[i]);
    }
    correct as f64 / features.len() as f64
}

fn noiseless(seed: u64) -> WindowedDataset {
    generate(&SynthConfig {
        windows_per_class: 12,
        noise_std: 0.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn single_modality_ceiling_is_below_fused() {
    for seed in [0, 1, 2] {
        let ds = noiseless(seed);
        let labels = ds.labels().unwrap();
        let per_modality: Vec<Vec<Vec<f64>>> = (0..ds.num_modalities())
            .map(|m| (0..ds.len()).map(|i| dft_magnitudes(&ds, m, i)).collect())
            .collect();
        for (m, feats) in per_modality.iter().enumerate() {
            let acc = loo_accuracy(feats, labels);
            assert!(acc < 1.0, "seed {seed} modality {m} separates every class ({acc})");
        }
        let fused: Vec<Vec<f64>> = (0..ds.len())
            .map(|i| per_modality.iter().flat_map(|f| f[i].clone()).collect())
            .collect();
        assert_eq!(loo_accuracy(&fused, labels), 1.0, "seed {seed}");
    }
}

#[test]
fn noiseless_class_windows_share_spectra() {
    let ds = noiseless(4);
    let labels = ds.labels().unwrap();
    for m in 0..ds.num_modalities() {
        for c in 0..ds.num_classes() {
            let members: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == c).collect();
            let reference = dft_magnitudes(&ds, m, members[0]);
            let scale = reference.iter().cloned().fold(0.0, f64::max);
            for &i in &members[1..] {
                let other = dft_magnitudes(&ds, m, i);
                let gap = reference.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(gap < 1e-4 * scale, "modality {m} class {c} window {i}: {gap}");
            }
        }
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = generate(&SynthConfig { windows_per_class: 20, seed: 3, ..Default::default() }).unwrap();
    let b = generate(&SynthConfig { windows_per_class: 20, seed: 3, ..Default::default() }).unwrap();
    let c = generate(&SynthConfig { windows_per_class: 20, seed: 4, ..Default::default() }).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
    assert_eq!(a.class_histogram(), vec![20; 4]);
}
