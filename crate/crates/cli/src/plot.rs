use std::path::Path;

use plotters::prelude::*;
use semcom_core::train_eval::{SweepResult, SweepRow, System};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XAxis {
    SnrTest,
    SnrEst,
}

impl XAxis {
    fn value(self, r: &SweepRow) -> f64 {
        match self {
            XAxis::SnrTest => r.snr_test_db,
            XAxis::SnrEst => r.snr_est_db,
        }
    }

    fn label(self) -> &'static str {
        match self {
            XAxis::SnrTest => "SNR_test (dB)",
            XAxis::SnrEst => "SNR_est (dB)",
        }
    }
}

type Metric = fn(&SweepRow) -> f64;

/// PSNR and MS-SSIM panels side by side, one line per system. Noiseless rows
/// have no position on the SNR axis and are left out.
pub fn plot_sweep(result: &SweepResult, x: XAxis, path: &Path) -> Result<(), String> {
    let series: Vec<(System, Vec<&SweepRow>)> = [System::Learned, System::Digital]
        .into_iter()
        .map(|s| {
            let mut rows: Vec<&SweepRow> =
                result.rows.iter().filter(|r| r.system == s && x.value(r).is_finite()).collect();
            rows.sort_by(|a, b| x.value(a).total_cmp(&x.value(b)));
            (s, rows)
        })
        .filter(|(_, rows)| !rows.is_empty())
        .collect();
    if series.is_empty() {
        return Err("nothing to plot: no rows with a finite SNR".into());
    }
    let xs = series.iter().flat_map(|(_, rows)| rows.iter().map(|r| x.value(r)));
    let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (x0, x1) = if x0 == x1 { (x0 - 1.0, x1 + 1.0) } else { (x0, x1) };

    let root = SVGBackend::new(path, (1000, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let panels = root.split_evenly((1, 2));
    let metrics: [(&str, Metric); 2] = [("PSNR (dB)", |r| r.psnr_db), ("MS-SSIM", |r| r.ms_ssim)];
    for (area, (name, get)) in panels.iter().zip(metrics) {
        let ys = series.iter().flat_map(|(_, rows)| rows.iter().map(|r| get(r)));
        let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let pad = ((y1 - y0) * 0.05).max(1e-3);
        let mut chart = ChartBuilder::on(area)
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(55)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
            .map_err(|e| e.to_string())?;
        chart.configure_mesh().x_desc(x.label()).y_desc(name).draw().map_err(|e| e.to_string())?;
        for (system, rows) in &series {
            let color = match system {
                System::Learned => BLUE,
                System::Digital => RED,
            };
            let label = match system {
                System::Learned => "learned",
                System::Digital => "digital",
            };
            let points: Vec<(f64, f64)> = rows.iter().map(|r| (x.value(r), get(r))).collect();
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(|e| e.to_string())?
                .label(label)
                .legend(move |(px, py)| PathElement::new(vec![(px, py), (px + 20, py)], color));
            chart
                .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|e| e.to_string())?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    root.present().map_err(|e| e.to_string())
}
