use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use neurograph::layout::{ElectrodeMontage, TopographyRenderer};

#[derive(Debug, Args)]
pub struct TopoArgs {
    /// Text file with one value per electrode, in montage order.
    #[arg(long)]
    pub values: PathBuf,
    /// Montage file; the built-in 32-channel montage when absent.
    #[arg(long)]
    pub montage: Option<PathBuf>,
    /// Output image (.pgm, or .ppm with --colormap).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub res: usize,
    /// Diverging red-blue map centred on zero instead of grayscale.
    #[arg(long)]
    pub colormap: bool,
}

/// Numbers separated by whitespace or commas; `#` starts a comment.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok.parse().with_context(|| format!("line {}: bad value {tok:?}", n + 1))?;
            anyhow::ensure!(v.is_finite(), "line {}: non-finite value", n + 1);
            out.push(v);
        }
    }
    Ok(out)
}

/// Plain PGM (P2) or PPM (P3). Pixels outside the head are white.
pub fn encode(renderer: &TopographyRenderer, image: &[f64], colormap: bool) -> String {
    let res = renderer.res();
    let inside: Vec<f64> =
        (0..res * res).filter(|&k| renderer.is_inside(k / res, k % res)).map(|k| image[k]).collect();
    let lo = inside.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amp = lo.abs().max(hi.abs());
    let mut s = format!("{}\n{res} {res}\n255\n", if colormap { "P3" } else { "P2" });
    for r in 0..res {
        let mut px = Vec::with_capacity(res);
        for c in 0..res {
            let v = image[r * res + c];
            let inside = renderer.is_inside(r, c);
            px.push(if colormap {
                let (red, green, blue) = if !inside {
                    (255, 255, 255)
                } else {
                    let t = if amp > 0.0 { (v / amp).clamp(-1.0, 1.0) } else { 0.0 };
                    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                    if t >= 0.0 {
                        (255, fade, fade)
                    } else {
                        (fade, fade, 255)
                    }
                };
                format!("{red} {green} {blue}")
            } else if !inside {
                "255".to_string()
            } else {
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                // keep 255 for the background
                format!("{}", (254.0 * t).round() as u8)
            });
        }
        let _ = writeln!(s, "{}", px.join(" "));
    }
    s
}

pub fn run(args: TopoArgs) -> Result<()> {
    let montage = match &args.montage {
        Some(p) => ElectrodeMontage::load(p)?,
        None => ElectrodeMontage::deap32(),
    };
    let values = parse_values(
        &fs::read_to_string(&args.values).with_context(|| format!("reading {}", args.values.display()))?,
    )?;
    if values.len() != montage.len() {
        anyhow::bail!("{} values for a {}-electrode montage", values.len(), montage.len());
    }
    if args.res == 0 {
        return Err(crate::usage("--res must be positive"));
    }
    let renderer = TopographyRenderer::new(&montage, args.res)?;
    let image = renderer.render(&values)?;
    write_image(&args.out, &encode(&renderer, &image, args.colormap))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_image(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
