//! `plslam`: simulate a sequence, build the initial map, optimize it
//! offline, relocalize query frames and evaluate the results.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pl_cli::config::Config;
use pl_cli::eval::{ate_rmse, relocalization_recall, Alignment};
use pl_cli::file_frontend::FileFrontend;
use pl_cli::pipeline;
use pl_cli::CliError;
use pl_features::{read_frontend_output, MatcherConfig, ScoredSegment};
use pl_map::{read_map, write_map};
use pl_odometry::{read_tum, run_vo, write_tum, VoConfig};
use pl_reloc::run_query_batch;

#[derive(Parser)]
#[command(name = "plslam", about = "Point-line stereo SLAM pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence: feature files, IMU stream, ground
    /// truth and relocalization queries.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the stereo VO/VIO over a feature directory and write the
    /// initial map plus the trajectory.
    Map {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Offline optimization: loop closure, merging, (PGO+)GBA, junction
    /// vocabulary.
    OptimizeMap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relocalize a query batch against an optimized map.
    Relocalize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics: ATE, relocalization recall or structural AP.
    Evaluate {
        #[command(subcommand)]
        what: EvaluateCommand,
    },
    /// Print map statistics.
    Inspect {
        #[arg(long)]
        map: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Absolute trajectory error between two TUM files.
    Ate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// "se3" (default) or "none".
        #[arg(long, default_value = "se3")]
        align: String,
    },
    /// Relocalization recall from a query report and ground-truth poses.
    Recall {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Structural AP between detected and ground-truth line files (PLF1).
    Sap {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Source image width/height, for rescaling to the 512 frame.
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                CliError::Config(_) | CliError::InsufficientOverlap(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config = load_config(&config)?;
            let mut seq = pipeline::build_sequence(&config)?;
            pipeline::write_sequence(&mut seq, &out)?;

            // Query batch at the degraded level plus its ground truth.
            let queries = pipeline::generate_queries(&config)?;
            let query_dir = out.join("queries");
            std::fs::create_dir_all(&query_dir)?;
            let mut gt_lines = Vec::new();
            for (id, features, pose) in &queries {
                let file = std::fs::File::create(query_dir.join(format!("{id}.plf")))?;
                pl_features::write_frontend_output(std::io::BufWriter::new(file), features)
                    .map_err(|e| CliError::Eval(format!("query write: {e}")))?;
                gt_lines.push((id.clone(), *pose));
            }
            let mut gt = std::fs::File::create(query_dir.join("groundtruth.txt"))?;
            for (id, pose) in &gt_lines {
                let wc = pose.inverse();
                let q = wc.rotation();
                let c = wc.translation();
                writeln!(
                    gt,
                    "{id} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                    c.x, c.y, c.z, q.i, q.j, q.k, q.w
                )?;
            }
            println!(
                "simulate: {} frames, {} queries, config {}",
                seq.frontend.num_frames(),
                queries.len(),
                config.hash()
            );
            Ok(())
        }
        Command::Map {
            config,
            seq,
            map,
            trajectory,
        } => {
            let config = load_config(&config)?;
            let vo_config: VoConfig = config.vo_config()?;
            let info = pipeline::read_sequence_info(&seq, nalgebra::Vector3::new(0.0, 0.0, -9.81))?;
            let mut frontend = FileFrontend::new(
                &seq,
                MatcherConfig {
                    ratio: config.vo.matcher_ratio,
                },
            );
            let output = run_vo(&mut frontend, &info, &vo_config)
                .map_err(|e| CliError::Eval(format!("odometry: {e}")))?;
            let file = std::fs::File::create(&map)?;
            write_map(std::io::BufWriter::new(file), &output.map)
                .map_err(|e| CliError::Eval(format!("map write: {e}")))?;
            if let Some(path) = trajectory {
                let file = std::fs::File::create(path)?;
                write_tum(std::io::BufWriter::new(file), &output.trajectory)?;
            }
            println!(
                "map: {} keyframes, {} points, {} lines, {} losses, config {}",
                output.map.keyframes.len(),
                output.map.points.len(),
                output.map.lines.len(),
                output.report.tracking_losses.len(),
                config.hash()
            );
            Ok(())
        }
        Command::OptimizeMap { config, input, out } => {
            let config = load_config(&config)?;
            let file = std::fs::File::open(&input)
                .map_err(|e| CliError::Config(format!("cannot open {}: {e}", input.display())))?;
            let mut map = read_map(std::io::BufReader::new(file))
                .map_err(|e| CliError::Config(format!("map read: {e}")))?;
            let summary = pipeline::optimize_map(&mut map, &config)?;
            let file = std::fs::File::create(&out)?;
            write_map(std::io::BufWriter::new(file), &map)
                .map_err(|e| CliError::Eval(format!("map write: {e}")))?;
            println!(
                "optimize-map: {} loops, {} points merged, {} lines merged, pgo {}, \
                 {} keypoint words, {} junction words, cost {:.3e} -> {:.3e}, config {}",
                summary.loops.len(),
                summary.merge.points_merged,
                summary.merge.lines_merged,
                if summary.gba.pgo_ran { "ran" } else { "skipped" },
                summary.keypoint_words,
                summary.junction_words,
                summary.gba.solve.initial_cost,
                summary.gba.solve.final_cost,
                config.hash()
            );
            Ok(())
        }
        Command::Relocalize {
            config,
            map,
            queries,
            out,
        } => {
            let config = load_config(&config)?;
            let file = std::fs::File::open(&map)
                .map_err(|e| CliError::Config(format!("cannot open {}: {e}", map.display())))?;
            let map = read_map(std::io::BufReader::new(file))
                .map_err(|e| CliError::Config(format!("map read: {e}")))?;
            let mut batch = Vec::new();
            let mut entries: Vec<_> = std::fs::read_dir(&queries)?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|ext| ext == "plf"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                return Err(CliError::Config(format!(
                    "no .plf queries under {}",
                    queries.display()
                )));
            }
            for path in entries {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_default();
                let file = std::fs::File::open(&path)?;
                let features = read_frontend_output(std::io::BufReader::new(file))
                    .map_err(|e| CliError::Config(format!("query read: {e}")))?;
                batch.push((id, features));
            }
            let reloc_config = config.reloc_config()?;
            let file = std::fs::File::create(&out)?;
            let results =
                run_query_batch(&batch, &map, &reloc_config, std::io::BufWriter::new(file))?;
            let successes = results
                .iter()
                .filter(|r| r.status == pl_reloc::RelocStatus::Success)
                .count();
            println!(
                "relocalize: {}/{} Success, config {}",
                successes,
                results.len(),
                config.hash()
            );
            Ok(())
        }
        Command::Evaluate { what } => evaluate(what),
        Command::Inspect { map } => {
            let file = std::fs::File::open(&map)
                .map_err(|e| CliError::Config(format!("cannot open {}: {e}", map.display())))?;
            let map = read_map(std::io::BufReader::new(file))
                .map_err(|e| CliError::Config(format!("map read: {e}")))?;
            let obs: usize = map.points.values().map(|p| p.observation_count()).sum();
            println!("keyframes: {}", map.keyframes.len());
            println!("points: {}", map.points.len());
            println!("lines: {}", map.lines.len());
            println!("covisibility-edges: {}", map.covisibility_edges().len());
            println!(
                "mean-track-length: {:.2}",
                obs as f64 / map.points.len().max(1) as f64
            );
            println!(
                "keypoint-vocabulary: {}",
                map.keypoint_vocabulary
                    .as_ref()
                    .map_or("absent".to_string(), |v| format!("{} words", v.word_count()))
            );
            println!(
                "junction-vocabulary: {}",
                map.junction_vocabulary
                    .as_ref()
                    .map_or("absent".to_string(), |v| format!("{} words", v.word_count()))
            );
            println!("config-hash: {}", map.metadata.config_hash);
            Ok(())
        }
    }
}

fn evaluate(what: EvaluateCommand) -> Result<(), CliError> {
    match what {
        EvaluateCommand::Ate { est, truth, align } => {
            let alignment = match align.as_str() {
                "se3" => Alignment::Se3,
                "none" => Alignment::None,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown alignment {other:?} (se3|none)"
                    )))
                }
            };
            let est = read_tum(open_buf(&est)?)
                .map_err(|e| CliError::Config(format!("estimate: {e}")))?;
            let truth = read_tum(open_buf(&truth)?)
                .map_err(|e| CliError::Config(format!("truth: {e}")))?;
            let report = ate_rmse(&est, &truth, alignment)?;
            println!("associated: {}", report.associated);
            println!("ate-rmse: {:.6}", report.rmse);
            Ok(())
        }
        EvaluateCommand::Recall { report, truth } => {
            let report_text = std::fs::read_to_string(&report)?;
            let mut results = Vec::new();
            for line in report_text.lines() {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 13 {
                    return Err(CliError::Config(format!("bad report line: {line}")));
                }
                let id = fields[0].to_string();
                let pose = if fields[1] == "Success" {
                    let vals: Vec<f64> = fields[2..9]
                        .iter()
                        .map(|v| v.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| CliError::Config(format!("bad report line: {e}")))?;
                    let wc = pl_geometry::Pose::new(
                        nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                            vals[6], vals[3], vals[4], vals[5],
                        )),
                        nalgebra::Vector3::new(vals[0], vals[1], vals[2]),
                    );
                    Some(wc.inverse())
                } else {
                    None
                };
                results.push((id, pose));
            }
            let truth_text = std::fs::read_to_string(&truth)?;
            let mut gt = Vec::new();
            for line in truth_text.lines() {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 8 {
                    return Err(CliError::Config(format!("bad truth line: {line}")));
                }
                let vals: Vec<f64> = fields[1..]
                    .iter()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Config(format!("bad truth line: {e}")))?;
                let wc = pl_geometry::Pose::new(
                    nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                        vals[6], vals[3], vals[4], vals[5],
                    )),
                    nalgebra::Vector3::new(vals[0], vals[1], vals[2]),
                );
                gt.push((fields[0].to_string(), wc.inverse()));
            }
            let recall = relocalization_recall(&results, &gt);
            println!(
                "recall: {:.4} ({}/{}) within {} m / {} deg",
                recall.recall,
                recall.successes,
                recall.total,
                recall.translation_gate_m,
                recall.rotation_gate_deg
            );
            Ok(())
        }
        EvaluateCommand::Sap {
            detections,
            truth,
            width,
            height,
        } => {
            let det = read_frontend_output(open_buf(&detections)?)
                .map_err(|e| CliError::Config(format!("detections: {e}")))?;
            let gt = read_frontend_output(open_buf(&truth)?)
                .map_err(|e| CliError::Config(format!("truth: {e}")))?;
            let sx = 512.0 / f64::from(width);
            let sy = 512.0 / f64::from(height);
            let scale = |p: nalgebra::Vector2<f64>| nalgebra::Vector2::new(p.x * sx, p.y * sy);
            let dets: Vec<ScoredSegment> = det
                .lines
                .iter()
                .map(|l| ScoredSegment::new(scale(l.p1), scale(l.p2), l.score))
                .collect();
            let truths: Vec<(nalgebra::Vector2<f64>, nalgebra::Vector2<f64>)> = gt
                .lines
                .iter()
                .map(|l| (scale(l.p1), scale(l.p2)))
                .collect();
            for vartheta in [5.0, 10.0, 15.0] {
                let ap = pl_features::sap_score(&dets, &truths, vartheta);
                println!("sap-{vartheta}: {ap:.4}");
            }
            Ok(())
        }
    }
}

fn open_buf(path: &PathBuf) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(std::io::BufReader::new(file))
}
