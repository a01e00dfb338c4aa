use std::io::Write;
use std::path::{Path, PathBuf};

use svbr_core::dataset::formats::{load_blur_map, read_image};
use svbr_core::metrics::{format_ssim_psnr, mae_blur, psnr, ssim, SsimConfig, PSNR_CAP};

use crate::{io_err, CliError, CliResult, EvalArgs};

/// Visible regular files of `dir`, sorted by name.
fn list_files(dir: &Path) -> CliResult<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_err(&dir.display().to_string(), e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(&dir.display().to_string(), e))?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if path.is_file() && !name.starts_with('.') {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Pairs every ground-truth file with the same-named prediction.
fn pair_files(pred: &Path, gt: &Path) -> CliResult<Vec<(String, PathBuf, PathBuf)>> {
    let names = list_files(gt)?;
    if names.is_empty() {
        return Err(CliError::Input(format!(
            "{} contains no files",
            gt.display()
        )));
    }
    names
        .into_iter()
        .map(|name| {
            let p = pred.join(&name);
            if !p.is_file() {
                return Err(CliError::Input(format!(
                    "missing prediction {} for ground truth {name}",
                    p.display()
                )));
            }
            let g = gt.join(&name);
            Ok((name, p, g))
        })
        .collect()
}

pub fn report(args: &EvalArgs) -> CliResult<String> {
    let cfg = SsimConfig::default();
    let mut lines = vec!["# svbr eval report v1".to_string()];
    let pairs = pair_files(&args.pred_dir, &args.gt_dir)?;
    let (mut ssim_sum, mut psnr_sum) = (0.0, 0.0);
    for (name, p, g) in &pairs {
        let (pred, gt) = (read_image(p)?, read_image(g)?);
        if pred.shape() != gt.shape() {
            return Err(CliError::Input(format!(
                "{name}: prediction and ground truth differ in shape"
            )));
        }
        let s = ssim(&pred, &gt, &cfg)?.mean;
        let q = psnr(&pred, &gt)?.min(PSNR_CAP);
        ssim_sum += s;
        psnr_sum += q;
        lines.push(format!(
            "image={name} ssim={s:.6} psnr={q:.4} ssim/psnr={}",
            format_ssim_psnr(s, q)
        ));
    }
    let n = pairs.len() as f64;
    let (ms, mp) = (ssim_sum / n, psnr_sum / n);
    lines.push(format!(
        "mean images={} ssim={ms:.6} psnr={mp:.4} ssim/psnr={}",
        pairs.len(),
        format_ssim_psnr(ms, mp)
    ));

    if let (Some(mp), Some(mg)) = (&args.map_pred, &args.map_gt) {
        let map_pairs = if mg.is_dir() {
            pair_files(mp, mg)?
        } else {
            let name = mg
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("map")
                .to_string();
            vec![(name, mp.clone(), mg.clone())]
        };
        let mut mae_sum = 0.0;
        for (name, p, g) in &map_pairs {
            let (a, b) = (load_blur_map(p)?, load_blur_map(g)?);
            if a.shape() != b.shape() {
                return Err(CliError::Input(format!(
                    "{name}: blur maps differ in shape"
                )));
            }
            let mae = mae_blur(&a, &b)?;
            mae_sum += mae;
            lines.push(format!("map={name} mae={mae:.6}"));
        }
        lines.push(format!(
            "mean maps={} mae={:.3}",
            map_pairs.len(),
            mae_sum / map_pairs.len() as f64
        ));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    Ok(text)
}

pub fn run(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let text = report(args)?;
    if let Some(path) = &args.report {
        std::fs::write(path, &text).map_err(|e| io_err(&path.display().to_string(), e))?;
    }
    write!(out, "{text}").map_err(|e| io_err("stdout", e))
}
