//! Latent-space CSV export: per-class samples of encoded coordinates.

use crate::data::Dataset;
use crate::zoo::{CreModel, Family, Result};

/// Encodes the first `per_class` instances of each class (by dataset
/// index) and writes one CSV row per instance: `label,z0,z1,...`.
/// Transformer latents export the token-averaged vector. Coordinates are
/// the encoder outputs, bit for bit.
pub fn export_latent(model: &mut CreModel, dataset: &Dataset, per_class: usize) -> Result<String> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut counts = [0usize; 10];
    for (i, &label) in dataset.labels.iter().enumerate() {
        if counts[label] < per_class {
            counts[label] += 1;
            chosen.push(i);
        }
    }
    chosen.sort_by_key(|&i| (dataset.labels[i], i));

    let mut out = String::new();
    let dim = latent_dim(model);
    out.push_str("label");
    for i in 0..dim {
        out.push_str(&format!(",z{i}"));
    }
    out.push('\n');
    for &i in &chosen {
        let (image, label) = dataset.gather_batch(&[i]);
        let repr = model.encode(&image)?;
        let coords = match model.family {
            Family::Vit => {
                // average over the token axis
                let s = repr.data.shape();
                let (tokens, d) = (s[1], s[2]);
                let mut avg = vec![0.0; d];
                for t in 0..tokens {
                    for (a, v) in avg.iter_mut().zip(&repr.data.data()[t * d..(t + 1) * d]) {
                        *a += v / tokens as f64;
                    }
                }
                avg
            }
            _ => repr.data.data().to_vec(),
        };
        out.push_str(&label[0].to_string());
        for v in coords {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn latent_dim(model: &CreModel) -> usize {
    model.n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, Split};
    use crate::zoo::{build_cre, MaskingMode, SizeClass};

    fn model() -> CreModel {
        build_cre(
            Family::Fc,
            SizeClass::Small,
            3,
            (1, 28, 28),
            MaskingMode::None,
            0.66,
            0.0,
            0.0,
            5,
        )
        .unwrap()
    }

    #[test]
    fn row_count_is_classes_times_per_class() {
        let ds = synth::synthetic_digits(Split::Test, 100);
        let mut m = model();
        let csv = export_latent(&mut m, &ds, 5).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "label,z0,z1,z2");
        assert_eq!(lines.len(), 1 + 50);
    }

    #[test]
    fn zero_per_class_gives_header_only() {
        let ds = synth::synthetic_digits(Split::Test, 50);
        let mut m = model();
        let csv = export_latent(&mut m, &ds, 0).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn coordinates_match_encode_bit_for_bit() {
        let ds = synth::synthetic_digits(Split::Test, 30);
        let mut m = model();
        let csv = export_latent(&mut m, &ds, 1).unwrap();
        // First data row is the first class-0 instance by index.
        let first_class0 = ds.labels.iter().position(|&l| l == 0).unwrap();
        let (image, _) = ds.gather_batch(&[first_class0]);
        let z = m.encode(&image).unwrap();
        let row = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "0");
        for (field, want) in fields[1..].iter().zip(z.data.data()) {
            let parsed: f64 = field.parse().unwrap();
            assert_eq!(parsed.to_bits(), want.to_bits(), "shortest round-trip formatting");
        }
    }
}
