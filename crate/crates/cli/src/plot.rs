//! Minimal raster plots for previews.

use hifreq_core::io::Image8;
use hifreq_train::TrainRecord;

pub const TRAIN_COLOR: [u8; 3] = [31, 119, 180];
pub const VAL_COLOR: [u8; 3] = [255, 127, 14];
const AXIS_COLOR: [u8; 3] = [90, 90, 90];
const MARGIN: usize = 24;

struct Canvas {
    img: Image8,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            img: Image8 {
                width,
                height,
                channels: 3,
                data: vec![255; width * height * 3],
            },
        }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        let (w, h) = (self.img.width as i64, self.img.height as i64);
        if (0..w).contains(&x) && (0..h).contains(&y) {
            let i = (y * w + x) as usize * 3;
            self.img.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), rgb: [u8; 3]) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.put(
                (x0 + t * (x1 - x0)).round() as i64,
                (y0 + t * (y1 - y0)).round() as i64,
                rgb,
            );
        }
    }
}

/// Train and validation loss against epoch on a log axis.
pub fn loss_curve(record: &TrainRecord, width: usize, height: usize) -> Image8 {
    let mut cv = Canvas::new(width, height);
    let (x0, y0) = (MARGIN as f64, (height - MARGIN) as f64);
    let (x1, y1) = ((width - MARGIN / 2) as f64, (MARGIN / 2) as f64);
    cv.line((x0, y0), (x1, y0), AXIS_COLOR);
    cv.line((x0, y0), (x0, y1), AXIS_COLOR);

    let logs = |f: fn(&hifreq_train::EpochRecord) -> f64| -> Vec<Option<f64>> {
        record
            .epochs
            .iter()
            .map(|e| {
                let v = f(e);
                (v > 0.0 && v.is_finite()).then(|| v.log10())
            })
            .collect()
    };
    let train = logs(|e| e.train_loss);
    let val = logs(|e| e.val_loss);
    let (lo, hi) = train
        .iter()
        .chain(&val)
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return cv.img;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = record.epochs.len();
    let px = |i: usize| x0 + (x1 - x0) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let py = |v: f64| y0 - (y0 - y1) * (v - lo) / span;
    for (series, color) in [(&train, TRAIN_COLOR), (&val, VAL_COLOR)] {
        let mut prev: Option<(f64, f64)> = None;
        for (i, v) in series.iter().enumerate() {
            let Some(v) = v else {
                prev = None;
                continue;
            };
            let p = (px(i), py(*v));
            match prev {
                Some(q) => cv.line(q, p, color),
                None => cv.line(p, p, color),
            }
            prev = Some(p);
        }
    }
    cv.img
}
