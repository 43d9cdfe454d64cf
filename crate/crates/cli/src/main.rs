use std::path::PathBuf;
use std::process::ExitCode;

use appcat::commands;
use appcat::synth::DetectionShape;
use appcat::{ConfigFlags, Result, RunReport};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "appcat", version, about = "Android app categorization and anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-app feature files from the manifest's APKs.
    Extract,
    /// Write a stratified train/test split of the manifest.
    Split,
    /// Vectorize and cluster apps; writes partition.csv and fitted models.
    Categorize,
    /// Place test and malware apps into the fitted clusters.
    Assign,
    /// Train per-cluster one-class SVMs and score the test apps.
    Detect,
    /// ARI of a partition against class labels or another partition.
    Evaluate {
        /// Partition CSV; defaults to <output_dir>/partition.csv.
        #[arg(long)]
        partition: Option<PathBuf>,
        /// Compare with this partition CSV instead of the class labels.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Merge the ARI rows of several reports into ari_summary.csv.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Write a synthetic manifest, malware manifest and API feature files.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        malware_per_class: usize,
    },
}

fn print_report(r: &RunReport) {
    for a in &r.ari {
        println!("ARI {:.4} ({} apps, {} vs {})", a.ari, a.n_apps, a.configuration, a.reference);
    }
    if let Some(d) = &r.detection {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
        println!(
            "TP {} FP {} FN {} TN {} | TPR {} FPR {} | F1 {:.3}",
            d.counts.tp,
            d.counts.fp,
            d.counts.fn_,
            d.counts.tn,
            pct(d.tpr),
            pct(d.fpr),
            d.f1
        );
    }
    for w in &r.warnings {
        log::warn!("{w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.flags.resolve()?;
    match cli.command {
        Command::Extract => {
            let out = commands::cmd_extract(&cfg)?;
            println!("{} feature file(s) written, {} failure(s)", out.written.len(), out.failures.len());
        }
        Command::Split => {
            let s = commands::cmd_split(&cfg)?;
            println!("{} train, {} test", s.train.len(), s.test.len());
        }
        Command::Categorize => print_report(&commands::cmd_categorize(&cfg)?),
        Command::Assign => print_report(&commands::cmd_assign(&cfg)?),
        Command::Detect => print_report(&commands::cmd_detect(&cfg)?),
        Command::Evaluate { partition, against } => {
            print_report(&commands::cmd_evaluate(&cfg, partition.as_deref(), against.as_deref())?)
        }
        Command::Report { reports } => {
            for row in commands::cmd_report(&cfg, &reports)? {
                println!("{}\t{}\t{:.4}\t{}", row.configuration, row.reference, row.ari, row.n_apps);
            }
        }
        Command::Synth {
            classes,
            per_class,
            malware_per_class,
        } => {
            let shape = DetectionShape {
                classes,
                per_class,
                malware_per_class,
                ..DetectionShape::default()
            };
            let (b, m) = commands::cmd_synth(&cfg, &shape)?;
            println!("wrote {} and {}", b.display(), m.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
