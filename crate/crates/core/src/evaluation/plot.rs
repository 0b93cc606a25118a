//! Training-curve PNGs.
//!
//! Text needs a TrueType font at run time. One is looked up in
//! `AEROTHREAT_FONT` and a few common system locations; without one the
//! curves are still drawn, just without captions, axis labels or legend.

use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;

use crate::error::{Error, Result};
use crate::training::EpochMetrics;

const FONT_CANDIDATES: [&str; 4] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

fn fonts_ready() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let from_env = std::env::var_os("AEROTHREAT_FONT").map(std::path::PathBuf::from);
        let bytes = from_env
            .into_iter()
            .chain(FONT_CANDIDATES.iter().map(Into::into))
            .find_map(|p| std::fs::read(p).ok());
        match bytes {
            Some(b) => {
                let leaked: &'static [u8] = Box::leak(b.into_boxed_slice());
                plotters::style::register_font("sans-serif", FontStyle::Normal, leaked).is_ok()
            }
            None => false,
        }
    })
}

struct Series<'a> {
    name: &'a str,
    color: RGBColor,
    values: Vec<f64>,
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        what: "plot",
        message: format!("{}: {e}", path.display()),
    }
}

fn draw(path: &Path, title: &str, y_label: &str, y_range: (f64, f64), series: &[Series]) -> Result<()> {
    let text = fonts_ready();
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let x_max = (n.max(2)) as f64;

    let mut builder = ChartBuilder::on(&root);
    builder.margin(15);
    if text {
        builder
            .caption(title, ("sans-serif", 24))
            .x_label_area_size(40)
            .y_label_area_size(60);
    }
    let mut chart = builder
        .build_cartesian_2d(1.0..x_max, y_range.0..y_range.1)
        .map_err(|e| plot_err(path, e))?;
    if text {
        chart
            .configure_mesh()
            .x_desc("Epoch")
            .y_desc(y_label)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    for s in series {
        let color = s.color;
        let points = s.values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v));
        let drawn = chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?;
        if text {
            drawn
                .label(s.name)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    root.present().map_err(|e| plot_err(path, e))
}

const TRAIN_CLASS: RGBColor = RGBColor(31, 119, 180);
const VAL_CLASS: RGBColor = RGBColor(255, 127, 14);
const TRAIN_THREAT: RGBColor = RGBColor(44, 160, 44);
const VAL_THREAT: RGBColor = RGBColor(214, 39, 40);

/// Train and validation accuracy of both heads per epoch.
pub fn plot_accuracy_curves(history: &[EpochMetrics], path: &Path) -> Result<()> {
    let col = |f: fn(&EpochMetrics) -> f64| history.iter().map(f).collect::<Vec<_>>();
    draw(
        path,
        "Training vs. Validation Accuracy",
        "Accuracy",
        (0.0, 1.0),
        &[
            Series { name: "train (category)", color: TRAIN_CLASS, values: col(|m| m.train_class_acc) },
            Series { name: "validation (category)", color: VAL_CLASS, values: col(|m| m.val_class_acc) },
            Series { name: "train (threat)", color: TRAIN_THREAT, values: col(|m| m.train_threat_acc) },
            Series { name: "validation (threat)", color: VAL_THREAT, values: col(|m| m.val_threat_acc) },
        ],
    )
}

/// Train and validation loss (sum over both heads) per epoch.
pub fn plot_loss_curves(history: &[EpochMetrics], path: &Path) -> Result<()> {
    let train: Vec<f64> = history.iter().map(|m| m.train_loss).collect();
    let val: Vec<f64> = history.iter().map(|m| m.val_loss).collect();
    let top = train.iter().chain(&val).copied().fold(0.0, f64::max);
    draw(
        path,
        "Training vs. Validation Loss",
        "Loss",
        (0.0, if top > 0.0 { top * 1.05 } else { 1.0 }),
        &[
            Series { name: "train", color: TRAIN_CLASS, values: train },
            Series { name: "validation", color: VAL_CLASS, values: val },
        ],
    )
}
