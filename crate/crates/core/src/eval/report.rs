use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::model::{MixtureOutput, ModelConfig};
use crate::scalar::Scalar;

/// Rows of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Wide-head mixture decoder, detection encoder only, no MI.
    Lstm,
    OursWoGnnMi,
    OursWoGnn,
    OursWoMi,
    Ours,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Lstm,
        ModelVariant::OursWoGnnMi,
        ModelVariant::OursWoGnn,
        ModelVariant::OursWoMi,
        ModelVariant::Ours,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelVariant::Lstm => "lstm",
            ModelVariant::OursWoGnnMi => "ours_wo_gnn_mi",
            ModelVariant::OursWoGnn => "ours_wo_gnn",
            ModelVariant::OursWoMi => "ours_wo_mi",
            ModelVariant::Ours => "ours",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == id)
    }

    /// `(gnn, omega_mm, mi)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            ModelVariant::Lstm => (false, false, false),
            ModelVariant::OursWoGnnMi => (false, true, false),
            ModelVariant::OursWoGnn => (false, true, true),
            ModelVariant::OursWoMi => (true, true, false),
            ModelVariant::Ours => (true, true, true),
        }
    }

    pub fn from_flags(gnn: bool, omega_mm: bool, mi: bool) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.flags() == (gnn, omega_mm, mi))
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let (gnn, omega, mi) = self.flags();
        ModelConfig {
            use_gnn: gnn,
            use_omega_mm: omega,
            use_mi: mi,
            ..base.clone()
        }
    }
}

/// One line of the benchmark CSV. `seed = None` marks a mean over seeds and
/// `metrics = None` a cell that could not be evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub variant: ModelVariant,
    pub horizon: u32,
    pub seed: Option<u64>,
    pub metrics: Option<Metrics>,
}

pub const REPORT_HEADER: [&str; 10] = ["dataset", "model", "gnn", "omega_mm", "mi", "horizon", "seed", "ll", "ade", "ct"];

impl ReportRow {
    pub fn record(&self) -> Vec<String> {
        let (gnn, omega, mi) = self.variant.flags();
        let b = |x: bool| (x as u8).to_string();
        let f = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{v:.6}"));
        vec![
            self.dataset.clone(),
            self.variant.id().to_string(),
            b(gnn),
            b(omega),
            b(mi),
            self.horizon.to_string(),
            self.seed.map_or("mean".to_string(), |s| s.to_string()),
            f(self.metrics.as_ref().map(|m| m.ll)),
            f(self.metrics.as_ref().map(|m| m.ade)),
            f(self.metrics.as_ref().map(|m| m.ct)),
        ]
    }
}

/// Evaluates every `(variant, horizon, seed)` cell in parallel and appends a
/// mean row per `(variant, horizon)`. Failing cells become NA rows.
pub fn run_benchmark<F>(dataset: &str, variants: &[ModelVariant], horizons: &[u32], seeds: &[u64], cell: F) -> Vec<ReportRow>
where
    F: Fn(ModelVariant, u32, u64) -> Result<Metrics, String> + Sync,
{
    let grid: Vec<(ModelVariant, u32, u64)> = variants
        .iter()
        .flat_map(|&v| horizons.iter().flat_map(move |&h| seeds.iter().map(move |&s| (v, h, s))))
        .collect();
    let results: Vec<Option<Metrics>> = grid
        .par_iter()
        .map(|&(v, h, s)| match cell(v, h, s) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("{dataset}/{}/T={h}/seed {s}: {e}", v.id());
                None
            }
        })
        .collect();
    let mut rows: Vec<ReportRow> = grid
        .iter()
        .zip(results)
        .map(|(&(variant, horizon, seed), metrics)| ReportRow {
            dataset: dataset.to_string(),
            variant,
            horizon,
            seed: Some(seed),
            metrics,
        })
        .collect();
    for &variant in variants {
        for &horizon in horizons {
            let done: Vec<&Metrics> = rows
                .iter()
                .filter(|r| r.variant == variant && r.horizon == horizon)
                .filter_map(|r| r.metrics.as_ref())
                .collect();
            let metrics = (!done.is_empty()).then(|| {
                let n = done.len() as f64;
                Metrics {
                    ll: done.iter().map(|m| m.ll).sum::<f64>() / n,
                    ade: done.iter().map(|m| m.ade).sum::<f64>() / n,
                    ct: done.iter().map(|m| m.ct).sum::<f64>() / n,
                    samples: done.iter().map(|m| m.samples).sum(),
                }
            });
            rows.push(ReportRow {
                dataset: dataset.to_string(),
                variant,
                horizon,
                seed: None,
                metrics,
            });
        }
    }
    rows
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.record()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// SVG heatmap of the mixture density over the normalized map, with the
/// ground truth (circle) and detections (crosses) overlaid.
pub fn heatmap_svg<T: Scalar>(
    m: &MixtureOutput<T>,
    aspect: (usize, usize),
    resolution: usize,
    ground_truth: Option<(f64, f64)>,
    detections: &[(f64, f64)],
) -> String {
    let res = resolution.max(2);
    let scale = 600.0 / aspect.0.max(aspect.1).max(1) as f64;
    let (w, h) = (aspect.0 as f64 * scale, aspect.1 as f64 * scale);
    let (cw, ch) = (w / res as f64, h / res as f64);
    let mut dens = vec![0.0; res * res];
    for j in 0..res {
        for i in 0..res {
            let p = ((i as f64 + 0.5) / res as f64, (j as f64 + 0.5) / res as f64);
            dens[j * res + i] = m.density((T::lit(p.0), T::lit(p.1))).to_f64_lossy();
        }
    }
    let peak = dens.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#0b1020"/>"##);
    for j in 0..res {
        for i in 0..res {
            let v = dens[j * res + i] / peak;
            if v < 1e-3 {
                continue;
            }
            let (r, g, b) = ramp(v);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},{g},{b})"/>"#,
                i as f64 * cw,
                j as f64 * ch,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    for d in detections {
        let (x, y) = (d.0 * w, d.1 * h);
        let _ = writeln!(
            svg,
            r##"<path d="M{:.1} {:.1} L{:.1} {:.1} M{:.1} {:.1} L{:.1} {:.1}" stroke="#7fd4ff" stroke-width="2"/>"##,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0
        );
    }
    if let Some(gt) = ground_truth {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="6" fill="none" stroke="#ffffff" stroke-width="2"/>"##,
            gt.0 * w,
            gt.1 * h
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn ramp(v: f64) -> (u8, u8, u8) {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v).min(1.0)) as u8;
    let g = (255.0 * (1.5 * v - 0.5).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (3.0 * v - 2.0).clamp(0.0, 1.0).max(0.35 * (1.0 - v))) as u8;
    (r, g, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ll: f64) -> Metrics {
        Metrics {
            ll,
            ade: 0.1,
            ct: 0.5,
            samples: 10,
        }
    }

    #[test]
    fn grid_row_counts_and_means() {
        let rows = run_benchmark("prisoner_low", &[ModelVariant::Lstm, ModelVariant::Ours], &[0, 30, 60], &[0, 1, 2], |v, h, s| {
            Ok(m(s as f64 + h as f64 + if v == ModelVariant::Ours { 1.0 } else { 0.0 }))
        });
        assert_eq!(rows.iter().filter(|r| r.seed.is_some()).count(), 18);
        let means: Vec<&ReportRow> = rows.iter().filter(|r| r.seed.is_none()).collect();
        assert_eq!(means.len(), 6);
        let ours30 = means.iter().find(|r| r.variant == ModelVariant::Ours && r.horizon == 30).unwrap();
        assert!((ours30.metrics.as_ref().unwrap().ll - 32.0).abs() < 1e-12);
        let csv = report_csv(&rows);
        assert!(csv.starts_with("dataset,model,gnn,omega_mm,mi,horizon,seed,ll,ade,ct\n"));
        assert_eq!(csv.lines().count(), 25);
    }

    #[test]
    fn missing_cells_are_na() {
        let rows = run_benchmark("d", &[ModelVariant::OursWoMi], &[0], &[0, 1], |_, _, s| {
            if s == 0 {
                Err("missing checkpoint".into())
            } else {
                Ok(m(2.0))
            }
        });
        assert_eq!(rows[0].record()[7], "NA");
        assert_eq!(rows[2].record()[6], "mean");
        assert_eq!(rows[2].record()[7], "2.000000");
    }

    #[test]
    fn variant_flags_roundtrip() {
        for v in ModelVariant::ALL {
            let (g, o, i) = v.flags();
            assert_eq!(ModelVariant::from_flags(g, o, i), Some(v));
            assert_eq!(ModelVariant::from_id(v.id()), Some(v));
        }
    }

    #[test]
    fn heatmap_is_svg() {
        let mix = MixtureOutput::<f64>::from_raw(&[0.0; 6]);
        let svg = heatmap_svg(&mix, (152, 152), 20, Some((0.5, 0.5)), &[(0.2, 0.3)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<circle") && svg.contains("<path"));
    }
}
