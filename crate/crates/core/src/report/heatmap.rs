use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::matrix::CommMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Log,
    Linear,
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(Scale::Log),
            "linear" => Ok(Scale::Linear),
            _ => Err(format!("unknown scale `{s}` (log|linear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStop {
    pub at: f64,
    pub rgb: [u8; 3],
}

/// Default five-stop dark-to-bright colormap.
pub const DEFAULT_STOPS: [ColorStop; 5] = [
    ColorStop {
        at: 0.0,
        rgb: [16, 16, 48],
    },
    ColorStop {
        at: 0.25,
        rgb: [72, 36, 132],
    },
    ColorStop {
        at: 0.5,
        rgb: [184, 54, 110],
    },
    ColorStop {
        at: 0.75,
        rgb: [248, 134, 52],
    },
    ColorStop {
        at: 1.0,
        rgb: [252, 244, 176],
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub scale: Scale,
    pub stops: Vec<ColorStop>,
    pub cell_px: u32,
    pub font_px: u32,
    /// Print the byte count inside each non-zero cell.
    pub show_values: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            scale: Scale::Log,
            stops: DEFAULT_STOPS.to_vec(),
            cell_px: 40,
            font_px: 12,
            show_values: false,
        }
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
#[error("invalid render spec: {0}")]
pub struct RenderSpecError(String);

impl RenderSpec {
    pub fn validate(&self) -> Result<(), RenderSpecError> {
        let (Some(first), Some(last)) = (self.stops.first(), self.stops.last()) else {
            return Err(RenderSpecError("no color stops".into()));
        };
        if self.stops.len() < 2 || first.at != 0.0 || last.at != 1.0 {
            return Err(RenderSpecError("stops must run from 0 to 1".into()));
        }
        if self.stops.windows(2).any(|w| w[0].at >= w[1].at) {
            return Err(RenderSpecError(
                "stop positions must strictly increase".into(),
            ));
        }
        if self.cell_px == 0 {
            return Err(RenderSpecError("cell size must be positive".into()));
        }
        Ok(())
    }

    /// Cell intensity in [0, 1], normalized to the matrix maximum.
    pub fn intensity(&self, bytes: u64, max: u64) -> f64 {
        if bytes == 0 || max == 0 {
            return 0.0;
        }
        match self.scale {
            Scale::Log => (1.0 + bytes as f64).log10() / (1.0 + max as f64).log10(),
            Scale::Linear => bytes as f64 / max as f64,
        }
    }

    pub fn color(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        let upper = self
            .stops
            .iter()
            .position(|s| s.at >= t)
            .unwrap_or(self.stops.len() - 1);
        if upper == 0 {
            return self.stops[0].rgb;
        }
        let (a, b) = (self.stops[upper - 1], self.stops[upper]);
        let f = (t - a.at) / (b.at - a.at);
        let mix = |i: usize| {
            (f64::from(a.rgb[i]) + f * (f64::from(b.rgb[i]) - f64::from(a.rgb[i]))).round() as u8
        };
        [mix(0), mix(1), mix(2)]
    }
}

fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Renders the matrix as an SVG grid, row = source, column = destination.
/// Output is a pure function of `(matrix, spec)`.
pub fn render_heatmap(matrix: &CommMatrix, spec: &RenderSpec) -> Result<String, RenderSpecError> {
    spec.validate()?;
    let dim = matrix.dim() as u32;
    let cell = spec.cell_px;
    let margin = cell.max(spec.font_px * 3);
    let size = margin + dim * cell;
    let max = matrix.max_cell();
    let labels = matrix.labels();

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect x="0" y="0" width="{size}" height="{size}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        svg,
        r##"<g font-family="sans-serif" font-size="{}" text-anchor="middle" fill="#000000">"##,
        spec.font_px
    );
    for (i, label) in labels.iter().enumerate() {
        let center = margin + i as u32 * cell + cell / 2;
        let _ = writeln!(
            svg,
            r#"<text x="{center}" y="{}">{label}</text>"#,
            margin - spec.font_px / 2
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{label}</text>"#,
            margin / 2,
            center + spec.font_px / 3
        );
    }
    let _ = writeln!(svg, "</g>");

    for row in 0..dim {
        for col in 0..dim {
            let bytes = matrix.get(row as usize, col as usize);
            let fill = hex(spec.color(spec.intensity(bytes, max)));
            let (x, y) = (margin + col * cell, margin + row * cell);
            let _ = writeln!(
                svg,
                r##"<rect class="cell" data-row="{row}" data-col="{col}" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#ffffff" stroke-width="1"><title>{} -&gt; {}: {bytes} B</title></rect>"##,
                labels[row as usize], labels[col as usize]
            );
            if spec.show_values && bytes > 0 {
                let _ = writeln!(
                    svg,
                    r##"<text x="{}" y="{}" font-family="sans-serif" font-size="{}" text-anchor="middle" fill="#7f7f7f">{bytes}</text>"##,
                    x + cell / 2,
                    y + cell / 2 + spec.font_px / 3,
                    spec.font_px.saturating_sub(2).max(1)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fills(svg: &str) -> Vec<String> {
        svg.lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| {
                let start = l.find("fill=\"").unwrap() + 6;
                l[start..start + 7].to_string()
            })
            .collect()
    }

    #[test]
    fn zero_matrix_uniform() {
        let svg = render_heatmap(&CommMatrix::zeros(3), &RenderSpec::default()).unwrap();
        let f = fills(&svg);
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|c| c == &hex(DEFAULT_STOPS[0].rgb)));
    }

    #[test]
    fn single_cell_full_intensity() {
        let m = CommMatrix::from_rows(1, false, &[vec![0, 1_000_000], vec![0, 0]]).unwrap();
        let svg = render_heatmap(&m, &RenderSpec::default()).unwrap();
        let f = fills(&svg);
        assert_eq!(f[1], hex(DEFAULT_STOPS[4].rgb));
        assert_eq!(
            f.iter()
                .filter(|c| **c == hex(DEFAULT_STOPS[0].rgb))
                .count(),
            3
        );
    }

    #[test]
    fn interpolation() {
        let spec = RenderSpec::default();
        assert_eq!(spec.color(0.0), DEFAULT_STOPS[0].rgb);
        assert_eq!(spec.color(0.5), DEFAULT_STOPS[2].rgb);
        assert_eq!(spec.color(1.0), DEFAULT_STOPS[4].rgb);
        assert_eq!(spec.color(0.125), [44, 26, 90]);
        assert!((spec.intensity(9, 99) - 0.5).abs() < 1e-12);
        let linear = RenderSpec {
            scale: Scale::Linear,
            ..RenderSpec::default()
        };
        assert!((linear.intensity(25, 100) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_stops() {
        let spec = RenderSpec {
            stops: vec![
                DEFAULT_STOPS[0],
                DEFAULT_STOPS[2],
                DEFAULT_STOPS[1],
                DEFAULT_STOPS[4],
            ],
            ..RenderSpec::default()
        };
        assert!(render_heatmap(&CommMatrix::zeros(1), &spec).is_err());
        let spec = RenderSpec {
            stops: vec![DEFAULT_STOPS[1], DEFAULT_STOPS[4]],
            ..RenderSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn aggregator_label() {
        let m =
            CommMatrix::from_rows(1, true, &[vec![0; 3], vec![0, 0, 5], vec![0, 5, 0]]).unwrap();
        let svg = render_heatmap(&m, &RenderSpec::default()).unwrap();
        assert!(svg.contains(">net</text>"));
    }
}
