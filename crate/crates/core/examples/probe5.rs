use cre_core::baselines::fit_pca;
use cre_core::data::{synth, Split};
use cre_core::tensor::Tensor;

fn main() {
    let train = synth::synthetic_digits(Split::Train, 6000);
    let (n, d) = (train.len(), train.pixels_per_image());
    let flat = Tensor::new(&[n, d], train.images.data().to_vec()).unwrap();

    // constant-prediction MSE = total pixel variance
    let mut mean = vec![0.0; d];
    for row in flat.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) { *m += v / n as f64; }
    }
    let mut var = 0.0;
    for row in flat.data().chunks(d) {
        for (m, v) in mean.iter().zip(row) { var += (v - m) * (v - m); }
    }
    println!("pixel variance (constant floor): {:.5}", var / (n * d) as f64);

    // class-prototype MSE (the pure-classification latent floor)
    let mut class_mean = vec![vec![0.0; d]; 10];
    let mut counts = [0usize; 10];
    for (i, &l) in train.labels.iter().enumerate() {
        counts[l] += 1;
        for (m, v) in class_mean[l].iter_mut().zip(&flat.data()[i * d..(i + 1) * d]) { *m += v; }
    }
    for (cm, c) in class_mean.iter_mut().zip(counts) {
        for m in cm.iter_mut() { *m /= c as f64; }
    }
    let mut cvar = 0.0;
    for (i, &l) in train.labels.iter().enumerate() {
        for (m, v) in class_mean[l].iter().zip(&flat.data()[i * d..(i + 1) * d]) { cvar += (v - m) * (v - m); }
    }
    println!("class-prototype MSE (lambda=0 floor): {:.5}", cvar / (n * d) as f64);

    for k in [8usize, 16, 32] {
        let basis = fit_pca(&flat, k).unwrap();
        println!("pca-{k} reconstruction MSE: {:.5}", basis.reconstruction_error(&flat).unwrap());
    }
}
