//! Hand-emitted SVG documents (no plotting dependency). Output is a
//! pure function of the input summaries, so re-rendering is
//! byte-identical; files are self-contained.

use super::SweepSummary;
use std::fmt::Write;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 460.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 70.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const ACCURACY_COLOR: &str = "#1f77b4";
const MSE_COLOR: &str = "#ff7f00";
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f00", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn fmt(v: f64) -> String {
    format!("{:.4}", v)
}

struct Scale {
    lo: f64,
    hi: f64,
    pix_lo: f64,
    pix_hi: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, pix_lo: f64, pix_hi: f64) -> Self {
        let (lo, hi) = if (hi - lo).abs() < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Self { lo, hi, pix_lo, pix_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.pix_lo + (v - self.lo) / (self.hi - self.lo) * (self.pix_hi - self.pix_lo)
    }
}

fn open_svg(out: &mut String, title: &str) {
    write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>{title}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
    .expect("write");
}

fn text(out: &mut String, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"{}\" font-family=\"sans-serif\" text-anchor=\"{anchor}\">{content}</text>",
        fmt(x),
        fmt(y),
        size
    )
    .expect("write");
}

fn line(out: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
    writeln!(
        out,
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>",
        fmt(x1),
        fmt(y1),
        fmt(x2),
        fmt(y2)
    )
    .expect("write");
}

/// One box-and-whisker glyph. Whiskers extend to the most extreme data
/// point within 1.5 IQR of the box.
#[allow(clippy::too_many_arguments)]
fn box_glyph(out: &mut String, x: f64, half_w: f64, scale: &Scale, s: &super::MetricSummary, color: &str) {
    let iqr = s.q3 - s.q1;
    let lo_whisker = s.min.max(s.q1 - 1.5 * iqr);
    let hi_whisker = s.max.min(s.q3 + 1.5 * iqr);
    let (y_q1, y_q3) = (scale.map(s.q1), scale.map(s.q3));
    let (top, bottom) = (y_q1.min(y_q3), y_q1.max(y_q3));
    writeln!(
        out,
        "<rect class=\"box\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.45\" stroke=\"{color}\"/>",
        fmt(x - half_w),
        fmt(top),
        fmt(2.0 * half_w),
        fmt((bottom - top).max(0.5)),
    )
    .expect("write");
    line(out, x - half_w, scale.map(s.median), x + half_w, scale.map(s.median), color, 2.0);
    line(out, x, scale.map(lo_whisker), x, top.max(bottom.min(scale.map(s.q1))), color, 1.0);
    line(out, x, bottom, x, scale.map(hi_whisker), color, 1.0);
    line(out, x - half_w * 0.6, scale.map(lo_whisker), x + half_w * 0.6, scale.map(lo_whisker), color, 1.0);
    line(out, x - half_w * 0.6, scale.map(hi_whisker), x + half_w * 0.6, scale.map(hi_whisker), color, 1.0);
}

/// Dual-axis box plot of accuracy (left axis, blue) and reconstruction
/// MSE (right axis, orange, inverted so up is better) per lambda.
pub fn plot_tradeoff(summaries: &[SweepSummary]) -> String {
    assert!(summaries.len() >= 2, "need at least two lambda groups");
    let mut groups: Vec<&SweepSummary> = summaries.iter().collect();
    groups.sort_by(|a, b| a.key.lambda().partial_cmp(&b.key.lambda()).expect("finite lambda"));

    let acc_lo = groups.iter().map(|s| s.accuracy.min).fold(f64::INFINITY, f64::min);
    let acc_hi = groups.iter().map(|s| s.accuracy.max).fold(f64::NEG_INFINITY, f64::max);
    let mse_lo = groups.iter().map(|s| s.mse.min).fold(f64::INFINITY, f64::min);
    let mse_hi = groups.iter().map(|s| s.mse.max).fold(f64::NEG_INFINITY, f64::max);
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).max(1e-9);
        (lo - 0.06 * span, hi + 0.06 * span)
    };
    let (acc_lo_p, acc_hi_p) = pad(acc_lo, acc_hi);
    let (mse_lo_p, mse_hi_p) = pad(mse_lo, mse_hi);
    let acc_scale = Scale::new(acc_lo_p, acc_hi_p, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    // MSE axis inverted: low (good) values plot high.
    let mse_scale = Scale::new(mse_lo_p, mse_hi_p, MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);

    let mut out = String::new();
    open_svg(&mut out, "classification / reconstruction trade-off");
    writeln!(
        out,
        "<g id=\"axes\" data-acc-min=\"{}\" data-acc-max=\"{}\" data-mse-min=\"{}\" data-mse-max=\"{}\">",
        acc_lo, acc_hi, mse_lo, mse_hi
    )
    .expect("write");
    line(&mut out, MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, "#333", 1.0);
    line(
        &mut out,
        WIDTH - MARGIN_RIGHT,
        MARGIN_TOP,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM,
        "#333",
        1.0,
    );
    line(
        &mut out,
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM,
        "#333",
        1.0,
    );
    for ticks in 0..=4 {
        let f = ticks as f64 / 4.0;
        let acc_v = acc_lo_p + f * (acc_hi_p - acc_lo_p);
        text(&mut out, MARGIN_LEFT - 8.0, acc_scale.map(acc_v) + 4.0, 11.0, "end", &fmt(acc_v));
        let mse_v = mse_lo_p + f * (mse_hi_p - mse_lo_p);
        text(
            &mut out,
            WIDTH - MARGIN_RIGHT + 8.0,
            mse_scale.map(mse_v) + 4.0,
            11.0,
            "start",
            &fmt(mse_v),
        );
    }
    out.push_str("</g>\n");

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (i, summary) in groups.iter().enumerate() {
        let x = MARGIN_LEFT + plot_w * (i as f64 + 0.5) / groups.len() as f64;
        box_glyph(&mut out, x - 12.0, 9.0, &acc_scale, &summary.accuracy, ACCURACY_COLOR);
        box_glyph(&mut out, x + 12.0, 9.0, &mse_scale, &summary.mse, MSE_COLOR);
        text(&mut out, x, HEIGHT - MARGIN_BOTTOM + 18.0, 11.0, "middle", &format!("{}", summary.key.lambda()));
    }
    text(&mut out, WIDTH / 2.0, HEIGHT - 14.0, 13.0, "middle", "lambda");
    text(&mut out, MARGIN_LEFT, 24.0, 12.0, "start", "accuracy (left, blue)");
    text(
        &mut out,
        WIDTH - MARGIN_RIGHT,
        24.0,
        12.0,
        "end",
        "reconstruction MSE (right, orange; axis inverted so up is better)",
    );
    out.push_str("</svg>\n");
    out
}

/// One line in a dimension-scaling chart.
#[derive(Debug, Clone)]
pub struct ScalingSeries {
    pub label: String,
    /// Sorted by n ascending.
    pub points: Vec<ScalingPoint>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalingPoint {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

/// Line + shaded 95% band per series over a log-scaled dimension axis.
/// Series with a single point draw as a marker only.
pub fn plot_scaling(series: &[ScalingSeries], metric_label: &str) -> String {
    assert!(!series.is_empty(), "need at least one series");
    let all_n: Vec<usize> = series.iter().flat_map(|s| s.points.iter().map(|p| p.n)).collect();
    assert!(
        {
            let mut distinct = all_n.clone();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len() >= 2
        },
        "need at least two distinct dimensions"
    );
    let x_lo = (*all_n.iter().min().expect("non-empty") as f64).log2();
    let x_hi = (*all_n.iter().max().expect("non-empty") as f64).log2();
    let y_lo = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.mean - p.half_width))
        .fold(f64::INFINITY, f64::min);
    let y_hi = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.mean + p.half_width))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (y_hi - y_lo).max(1e-9);
    let x_scale = Scale::new(x_lo, x_hi, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let y_scale = Scale::new(y_lo - 0.06 * span, y_hi + 0.06 * span, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

    let mut out = String::new();
    open_svg(&mut out, &format!("{metric_label} by latent dimension"));
    writeln!(out, "<g id=\"axes\" data-ymin=\"{y_lo}\" data-ymax=\"{y_hi}\">").expect("write");
    line(&mut out, MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, "#333", 1.0);
    line(
        &mut out,
        MARGIN_LEFT,
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM,
        "#333",
        1.0,
    );
    let mut ticks: Vec<usize> = all_n.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for n in &ticks {
        let x = x_scale.map((*n as f64).log2());
        line(&mut out, x, HEIGHT - MARGIN_BOTTOM, x, HEIGHT - MARGIN_BOTTOM + 5.0, "#333", 1.0);
        text(&mut out, x, HEIGHT - MARGIN_BOTTOM + 18.0, 11.0, "middle", &n.to_string());
    }
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let v = (y_lo - 0.06 * span) + f * (y_hi - y_lo + 0.12 * span);
        text(&mut out, MARGIN_LEFT - 8.0, y_scale.map(v) + 4.0, 11.0, "end", &fmt(v));
    }
    out.push_str("</g>\n");

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.points.len() == 1 {
            let p = s.points[0];
            writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\"/>",
                fmt(x_scale.map((p.n as f64).log2())),
                fmt(y_scale.map(p.mean))
            )
            .expect("write");
        } else {
            // Confidence band: upper edge forward, lower edge reversed.
            let mut band = String::new();
            for p in &s.points {
                write!(
                    band,
                    "{},{} ",
                    fmt(x_scale.map((p.n as f64).log2())),
                    fmt(y_scale.map(p.mean + p.half_width))
                )
                .expect("write");
            }
            for p in s.points.iter().rev() {
                write!(
                    band,
                    "{},{} ",
                    fmt(x_scale.map((p.n as f64).log2())),
                    fmt(y_scale.map(p.mean - p.half_width))
                )
                .expect("write");
            }
            writeln!(
                out,
                "<polygon class=\"band\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
                band.trim_end()
            )
            .expect("write");
            let mut poly = String::new();
            for p in &s.points {
                write!(
                    poly,
                    "{},{} ",
                    fmt(x_scale.map((p.n as f64).log2())),
                    fmt(y_scale.map(p.mean))
                )
                .expect("write");
            }
            writeln!(
                out,
                "<polyline class=\"series\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
                poly.trim_end()
            )
            .expect("write");
        }
        text(
            &mut out,
            WIDTH - MARGIN_RIGHT - 4.0,
            MARGIN_TOP + 16.0 * si as f64 + 12.0,
            11.0,
            "end",
            &format!("<tspan fill=\"{color}\">{}</tspan>", s.label),
        );
    }
    text(&mut out, WIDTH / 2.0, HEIGHT - 14.0, 13.0, "middle", "latent dimension (log scale)");
    text(&mut out, 20.0, 24.0, 12.0, "start", metric_label);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{GroupKey, MetricSummary};

    fn summary(lambda: f64, accs: &[f64], mses: &[f64]) -> SweepSummary {
        SweepSummary {
            key: GroupKey {
                family: "fc".into(),
                size: "small".into(),
                n: 16,
                dataset: "synth".into(),
                masking_mode: "none".into(),
                lambda_bits: lambda.to_bits(),
            },
            sample_count: accs.len(),
            accuracy: MetricSummary::from_sample(accs),
            mse: MetricSummary::from_sample(mses),
        }
    }

    /// Minimal well-formedness check: every open tag closes in order.
    pub(crate) fn assert_well_formed_xml(doc: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = doc;
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = rest.find('>').expect("unterminated tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("unmatched closing tag {name}"));
                assert_eq!(open, name, "mismatched tags");
            } else if !tag.ends_with('/') {
                let name: String = tag.split_whitespace().next().expect("tag name").to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn tradeoff_plot_has_two_boxes_per_lambda_and_parses() {
        let summaries = vec![
            summary(0.0, &[0.9, 0.92, 0.95], &[0.3, 0.32, 0.29]),
            summary(1.0, &[0.6, 0.65, 0.7], &[0.1, 0.11, 0.09]),
        ];
        let doc = plot_tradeoff(&summaries);
        assert_well_formed_xml(&doc);
        assert_eq!(doc.matches("<rect class=\"box\"").count(), 4, "2 metrics x 2 lambdas");
        assert!(!doc.contains("href"), "self-contained");
        // Axis ranges cover the data.
        assert!(doc.contains("data-acc-min=\"0.6\"") && doc.contains("data-acc-max=\"0.95\""));
        assert!(doc.contains("data-mse-min=\"0.09\"") && doc.contains("data-mse-max=\"0.32\""));
    }

    #[test]
    fn rendering_is_byte_identical() {
        let summaries = vec![summary(0.0, &[0.9], &[0.3]), summary(0.5, &[0.8], &[0.2])];
        assert_eq!(plot_tradeoff(&summaries), plot_tradeoff(&summaries));
    }

    #[test]
    fn scaling_plot_draws_lines_bands_and_lone_markers() {
        let series = vec![
            ScalingSeries {
                label: "lambda=0".into(),
                points: vec![
                    ScalingPoint { n: 4, mean: 0.8, half_width: 0.05 },
                    ScalingPoint { n: 16, mean: 0.9, half_width: 0.02 },
                ],
            },
            ScalingSeries {
                label: "pca".into(),
                points: vec![ScalingPoint { n: 8, mean: 0.7, half_width: 0.0 }],
            },
        ];
        let doc = plot_scaling(&series, "accuracy");
        assert_well_formed_xml(&doc);
        assert_eq!(doc.matches("<polyline class=\"series\"").count(), 1);
        assert_eq!(doc.matches("<polygon class=\"band\"").count(), 1);
        assert_eq!(doc.matches("<circle").count(), 1, "single-point series is a marker");
        // Two-point polyline has exactly two vertices.
        let pat = "<polyline class=\"series\" points=\"";
        let poly_start = doc.find(pat).unwrap();
        let tail = &doc[poly_start + pat.len()..];
        let points = &tail[..tail.find('"').unwrap()];
        assert_eq!(points.split_whitespace().count(), 2);
    }

    #[test]
    fn band_edges_are_mean_plus_minus_half_width() {
        let series = vec![ScalingSeries {
            label: "s".into(),
            points: vec![
                ScalingPoint { n: 2, mean: 1.0, half_width: 0.5 },
                ScalingPoint { n: 8, mean: 2.0, half_width: 0.25 },
            ],
        }];
        let doc = plot_scaling(&series, "mse");
        let pat = "<polygon class=\"band\" points=\"";
        let band_start = doc.find(pat).unwrap();
        let tail = &doc[band_start + pat.len()..];
        let pts: Vec<&str> = tail[..tail.find('"').unwrap()].split_whitespace().collect();
        assert_eq!(pts.len(), 4, "two vertices each way");
        // First vertex y = map(mean + half); last vertex y = map(mean - half)
        // at the same x.
        let first_x = pts[0].split(',').next().unwrap();
        let last_x = pts[3].split(',').next().unwrap();
        assert_eq!(first_x, last_x);
    }

    #[test]
    fn missing_dimension_in_one_series_leaves_others_complete() {
        let series = vec![
            ScalingSeries {
                label: "a".into(),
                points: vec![
                    ScalingPoint { n: 2, mean: 0.1, half_width: 0.0 },
                    ScalingPoint { n: 4, mean: 0.2, half_width: 0.0 },
                    ScalingPoint { n: 8, mean: 0.3, half_width: 0.0 },
                ],
            },
            ScalingSeries {
                label: "b".into(),
                points: vec![
                    ScalingPoint { n: 2, mean: 0.4, half_width: 0.0 },
                    ScalingPoint { n: 8, mean: 0.5, half_width: 0.0 },
                ],
            },
        ];
        let doc = plot_scaling(&series, "accuracy");
        assert_well_formed_xml(&doc);
        let pat = "<polyline class=\"series\" points=\"";
        let polys: Vec<&str> = doc.match_indices(pat).map(|(i, _)| {
            let tail = &doc[i + pat.len()..];
            &tail[..tail.find('"').unwrap()]
        }).collect();
        assert_eq!(polys.len(), 2);
        assert_eq!(polys[0].split_whitespace().count(), 3);
        assert_eq!(polys[1].split_whitespace().count(), 2);
    }
}
