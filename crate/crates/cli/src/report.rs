//! Report generation: accuracy-vs-round line plots (mean across seeds with a
//! min-max band), an accuracy-penalty bar chart, and a plain-text table. The
//! SVG output is a pure function of the inputs, byte-for-byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::runner::{write_atomic, RunSummary, SUMMARY_FILE};

/// Identity of one run family, recovered from a CSV filename.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub variant: String,
    pub partition: String,
    pub fraction: String,
}

impl GroupKey {
    pub fn label(&self) -> String {
        format!("{} {} {}", self.variant, self.partition, self.fraction)
    }
}

/// One parsed metrics file.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub seed: u64,
    pub rounds: Vec<u64>,
    pub accuracy: Vec<f64>,
}

/// Splits `{variant}_{partition}_{fraction}_{seed}.csv`.
pub fn parse_run_filename(name: &str) -> Option<(GroupKey, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() != 4 {
        return None;
    }
    let seed: u64 = parts[3].parse().ok()?;
    let _fraction: f64 = parts[2].parse().ok()?;
    if parts[1] != "iid" && parts[1] != "noniid" {
        return None;
    }
    Some((
        GroupKey {
            variant: parts[0].to_string(),
            partition: parts[1].to_string(),
            fraction: parts[2].to_string(),
        },
        seed,
    ))
}

/// Parses one metrics CSV, enforcing a rectangular field layout.
pub fn parse_csv(path: &Path) -> Result<RunSeries> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| anyhow::anyhow!("{}: empty file", path.display()))?;
    let columns = header.split(',').count();
    if !header.starts_with("round,accuracy,mean_loss,attack_active") {
        bail!("{}:1: unexpected header {header:?}", path.display());
    }

    let seed = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_run_filename)
        .map(|(_, seed)| seed)
        .unwrap_or(0);

    let mut rounds = Vec::new();
    let mut accuracy = Vec::new();
    for (ix, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            bail!(
                "{}:{}: expected {columns} fields, found {}",
                path.display(),
                ix + 1,
                fields.len()
            );
        }
        let round: u64 = fields[0]
            .parse()
            .with_context(|| format!("{}:{}: bad round {:?}", path.display(), ix + 1, fields[0]))?;
        let acc: f64 = fields[1].parse().with_context(|| {
            format!("{}:{}: bad accuracy {:?}", path.display(), ix + 1, fields[1])
        })?;
        rounds.push(round);
        accuracy.push(acc);
    }
    if rounds.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(RunSeries {
        seed,
        rounds,
        accuracy,
    })
}

/// All run families found in a directory.
pub fn collect_groups(run_dir: &Path) -> Result<BTreeMap<GroupKey, Vec<RunSeries>>> {
    let mut groups: BTreeMap<GroupKey, Vec<RunSeries>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(run_dir)
        .with_context(|| format!("reading {}", run_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    entries.sort();
    for path in entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((key, _)) = parse_run_filename(name) else {
            continue;
        };
        groups.entry(key).or_default().push(parse_csv(&path)?);
    }
    if groups.is_empty() {
        bail!("no metrics CSVs found in {}", run_dir.display());
    }
    for series in groups.values_mut() {
        series.sort_by_key(|s| s.seed);
    }
    Ok(groups)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    fn new(width: f64, height: f64) -> Self {
        Canvas {
            body: String::new(),
            width,
            height,
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" \
             viewBox=\"0 0 {:.0} {:.0}\" font-family=\"monospace\" font-size=\"12\">\n\
             <rect width=\"{:.0}\" height=\"{:.0}\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.width, self.height, self.body
        )
    }
}

/// Accuracy-vs-round plot: one line per run family (mean over seeds) with a
/// min-max band when several seeds exist.
pub fn render_accuracy_plot(groups: &BTreeMap<GroupKey, Vec<RunSeries>>) -> Result<String> {
    let (width, height) = (820.0, 460.0);
    let (left, right, top, bottom) = (60.0, 240.0, 20.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let max_round = groups
        .values()
        .flat_map(|series| series.iter().flat_map(|s| s.rounds.iter().copied()))
        .max()
        .unwrap_or(1) as f64;

    let x = |round: f64| left + (round - 1.0) / (max_round - 1.0).max(1.0) * plot_w;
    let y = |acc: f64| top + (1.0 - acc) * plot_h;

    let mut c = Canvas::new(width, height);
    // Axes and grid.
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let yy = y(acc);
        let _ = writeln!(
            c.body,
            "<line x1=\"{left:.2}\" y1=\"{yy:.2}\" x2=\"{:.2}\" y2=\"{yy:.2}\" stroke=\"#dddddd\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{acc:.1}</text>",
            left + plot_w,
            left - 8.0,
            yy + 4.0
        );
    }
    let tick_step = (max_round / 6.0).ceil().max(1.0);
    let mut round_tick = 1.0;
    while round_tick <= max_round {
        let xx = x(round_tick);
        let _ = writeln!(
            c.body,
            "<line x1=\"{xx:.2}\" y1=\"{top:.2}\" x2=\"{xx:.2}\" y2=\"{:.2}\" stroke=\"#eeeeee\"/>\
             <text x=\"{xx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{round_tick:.0}</text>",
            top + plot_h,
            top + plot_h + 16.0
        );
        round_tick += tick_step;
    }
    let _ = writeln!(
        c.body,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">round</text>\
         <text x=\"16\" y=\"{:.2}\" transform=\"rotate(-90 16 {:.2})\" text-anchor=\"middle\">accuracy</text>",
        left + plot_w / 2.0,
        height - 12.0,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    for (ix, (key, series)) in groups.iter().enumerate() {
        let color = PALETTE[ix % PALETTE.len()];
        let rounds = &series[0].rounds;
        for s in series {
            if s.rounds != *rounds {
                bail!("seed {} of {} has mismatched rounds", s.seed, key.label());
            }
        }
        let n = rounds.len();
        let mut mean = vec![0.0; n];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for s in series {
            for (i, &a) in s.accuracy.iter().enumerate() {
                mean[i] += a;
                lo[i] = lo[i].min(a);
                hi[i] = hi[i].max(a);
            }
        }
        for m in &mut mean {
            *m /= series.len() as f64;
        }

        if series.len() > 1 {
            let mut points = String::new();
            for i in 0..n {
                let _ = write!(points, "{:.2},{:.2} ", x(rounds[i] as f64), y(hi[i]));
            }
            for i in (0..n).rev() {
                let _ = write!(points, "{:.2},{:.2} ", x(rounds[i] as f64), y(lo[i]));
            }
            let _ = writeln!(
                c.body,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
                points.trim_end()
            );
        }
        let mut points = String::new();
        for i in 0..n {
            let _ = write!(points, "{:.2},{:.2} ", x(rounds[i] as f64), y(mean[i]));
        }
        let _ = writeln!(
            c.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            points.trim_end()
        );
        // Legend entry.
        let ly = top + 10.0 + ix as f64 * 18.0;
        let _ = writeln!(
            c.body,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\">{} ({} seeds)</text>",
            left + plot_w + 12.0,
            left + plot_w + 36.0,
            left + plot_w + 42.0,
            ly + 4.0,
            key.label(),
            series.len()
        );
    }

    // Frame.
    let _ = writeln!(
        c.body,
        "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" \
         fill=\"none\" stroke=\"#333333\"/>"
    );
    Ok(c.finish())
}

/// Penalty bar chart against the clean baseline, from the run summary. Every
/// bar carries its exact value in a `data-penalty` attribute.
pub fn render_penalty_bars(summary: &RunSummary) -> Result<String> {
    let mut bars: Vec<(&String, &crate::runner::VariantSummary, f64)> = summary
        .variants
        .iter()
        .filter(|(_, v)| v.attack != "none")
        .filter_map(|(name, v)| v.penalty_vs_clean.map(|p| (name, v, p)))
        .collect();
    bars.sort_by(|a, b| {
        a.1.adversary_fraction
            .partial_cmp(&b.1.adversary_fraction)
            .unwrap()
            .then(a.0.cmp(b.0))
    });
    if bars.is_empty() {
        bail!("summary contains no attacked variants with a clean baseline");
    }

    let (width, height) = (820.0, 460.0);
    let (left, top, bottom) = (60.0, 30.0, 80.0);
    let plot_w = width - left - 30.0;
    let plot_h = height - top - bottom;
    let max_abs = bars
        .iter()
        .map(|(_, _, p)| p.abs())
        .fold(1.0_f64, f64::max);
    let baseline = top + plot_h * (max_abs / (2.0 * max_abs));
    let scale = plot_h / (2.0 * max_abs);

    let mut c = Canvas::new(width, height);
    let slot = plot_w / bars.len() as f64;
    for (ix, (name, v, penalty)) in bars.iter().enumerate() {
        let color = PALETTE[ix % PALETTE.len()];
        let bw = slot * 0.6;
        let bx = left + ix as f64 * slot + slot * 0.2;
        let bh = penalty.abs() * scale;
        let by = if *penalty >= 0.0 { baseline - bh } else { baseline };
        let _ = writeln!(
            c.body,
            "<rect x=\"{bx:.2}\" y=\"{by:.2}\" width=\"{bw:.2}\" height=\"{bh:.2}\" \
             fill=\"{color}\" data-penalty=\"{penalty}\"/>"
        );
        let _ = writeln!(
            c.body,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{penalty:.1}</text>",
            bx + bw / 2.0,
            if *penalty >= 0.0 { by - 6.0 } else { by + bh + 14.0 }
        );
        let _ = writeln!(
            c.body,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{name}</text>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{} {:.0}%</text>",
            bx + bw / 2.0,
            top + plot_h + 20.0,
            bx + bw / 2.0,
            top + plot_h + 36.0,
            v.partition,
            v.adversary_fraction * 100.0
        );
    }
    let _ = writeln!(
        c.body,
        "<line x1=\"{left:.2}\" y1=\"{baseline:.2}\" x2=\"{:.2}\" y2=\"{baseline:.2}\" stroke=\"#333333\"/>\
         <text x=\"16\" y=\"{:.2}\" transform=\"rotate(-90 16 {:.2})\" text-anchor=\"middle\">accuracy penalty (points)</text>",
        left + plot_w,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    Ok(c.finish())
}

/// Fixed-width summary table.
pub fn render_table(summary: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<6} {:<8} {:>9} {:>7} {:>6} {:>11} {:>9}",
        "variant", "attack", "part", "fraction", "pnr_db", "seeds", "final_acc", "penalty"
    );
    for (name, v) in &summary.variants {
        let penalty = v
            .penalty_vs_clean
            .map_or("-".to_string(), |p| format!("{p:.2}"));
        let final_acc = if v.final_accuracy_per_seed.is_empty() {
            "-".to_string()
        } else {
            format!("{:.4}", v.final_accuracy_mean)
        };
        let _ = writeln!(
            out,
            "{:<14} {:<6} {:<8} {:>9.2} {:>7.1} {:>6} {:>11} {:>9}",
            name,
            v.attack,
            v.partition,
            v.adversary_fraction,
            v.pnr_db,
            v.seeds.len(),
            final_acc,
            penalty
        );
        for f in &v.failures {
            let _ = writeln!(out, "  FAILED seed {}: {}", f.seed, f.error);
        }
    }
    out
}

#[derive(Debug)]
pub struct ReportPaths {
    pub accuracy_plot: PathBuf,
    pub penalty_plot: Option<PathBuf>,
    pub table: PathBuf,
    pub table_text: String,
}

/// Reads a run directory and writes the SVG plots and text table.
pub fn cmd_report(run_dir: &Path, out_dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(out_dir)?;
    let groups = collect_groups(run_dir)?;
    let accuracy_svg = render_accuracy_plot(&groups)?;
    let accuracy_path = out_dir.join("accuracy_vs_round.svg");
    write_atomic(&accuracy_path, accuracy_svg.as_bytes())?;

    let summary_path = run_dir.join(SUMMARY_FILE);
    let (penalty_plot, table_text) = if summary_path.exists() {
        let summary: RunSummary = serde_json::from_str(
            &fs::read_to_string(&summary_path)
                .with_context(|| format!("reading {}", summary_path.display()))?,
        )
        .context("parsing summary.json")?;
        let table = render_table(&summary);
        let penalty = match render_penalty_bars(&summary) {
            Ok(svg) => {
                let path = out_dir.join("penalty_bars.svg");
                write_atomic(&path, svg.as_bytes())?;
                Some(path)
            }
            Err(_) => None,
        };
        (penalty, table)
    } else {
        let mut table = String::from("variant groups found (no summary.json):\n");
        for (key, series) in &groups {
            let _ = writeln!(table, "  {} ({} seeds)", key.label(), series.len());
        }
        (None, table)
    };

    let table_path = out_dir.join("table.txt");
    write_atomic(&table_path, table_text.as_bytes())?;
    Ok(ReportPaths {
        accuracy_plot: accuracy_path,
        penalty_plot,
        table: table_path,
        table_text,
    })
}
