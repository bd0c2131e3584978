use std::fs::File;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_labels, load_volume, read_box_csv};
use crate::volume::{AnnotationKind, AnnotationSet, Box3};

use super::seg_to_boxes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub task: AnnotationKind,
    pub command_template: String,
    pub timeout_secs: f64,
    /// Working directory of the command; the invocation's scratch directory
    /// when absent.
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        for ph in ["{input}", "{output}"] {
            let n = self.command_template.matches(ph).count();
            if n != 1 {
                return Err(Error::InvalidParameter(format!(
                    "model {}: command must contain {ph} exactly once (found {n})",
                    self.name
                )));
            }
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::InvalidParameter(format!("model {}: timeout must be positive", self.name)));
        }
        Ok(())
    }

    /// Command line with both placeholders replaced by quoted paths.
    pub fn command_line(&self, input: &Path, output: &Path) -> String {
        self.command_template
            .replace("{input}", &shell_quote(&input.to_string_lossy()))
            .replace("{output}", &shell_quote(&output.to_string_lossy()))
    }
}

/// POSIX single-quote quoting.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub case_id: String,
    pub prediction: AnnotationSet,
    pub wall_time: f64,
    pub exit_status: i32,
}

impl ModelOutput {
    pub fn task(&self) -> AnnotationKind {
        self.prediction.kind()
    }

    /// Predicted boxes; label maps are converted with [`seg_to_boxes`].
    pub fn boxes(&self) -> Vec<Box3> {
        match &self.prediction {
            AnnotationSet::Detection(b) => b.clone(),
            AnnotationSet::Segmentation(l) => seg_to_boxes(l),
        }
    }
}

fn output_name(input: &Path, task: AnnotationKind) -> &'static str {
    match task {
        AnnotationKind::Detection => "output.csv",
        AnnotationKind::Segmentation => {
            let name = input.to_string_lossy();
            if name.ends_with(".mha") {
                "output.mha"
            } else if name.ends_with(".mhd") {
                "output.mhd"
            } else {
                "output.nii.gz"
            }
        }
    }
}

fn stderr_tail(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(5)..].join(" | ")
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall on a process group we created.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

/// Runs `spec` on the volume at `input`.
///
/// The command runs through `sh -c` in its own process group, inside a fresh
/// scratch directory that also receives its stdout and stderr. On timeout the
/// whole group is killed.
pub fn run_model(spec: &ModelSpec, input: &Path, case_id: &str) -> Result<ModelOutput> {
    spec.validate()?;
    if !input.is_file() {
        return Err(Error::io(input, std::io::Error::new(std::io::ErrorKind::NotFound, "model input missing")));
    }
    let input = input.canonicalize().map_err(|e| Error::io(input, e))?;
    let scratch = tempfile::Builder::new()
        .prefix(&format!("ctrobust-{}-", spec.name))
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let output = scratch.path().join(output_name(&input, spec.task));
    let out_log = scratch.path().join("stdout.log");
    let err_log = scratch.path().join("stderr.log");
    let cwd = spec.working_dir.clone().unwrap_or_else(|| scratch.path().to_path_buf());

    let cmd = spec.command_line(&input, &output);
    log::debug!("model {} case {case_id}: {cmd}", spec.name);
    let start = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(&cwd)
        .stdin(Stdio::null())
        .stdout(File::create(&out_log).map_err(|e| Error::io(&out_log, e))?)
        .stderr(File::create(&err_log).map_err(|e| Error::io(&err_log, e))?)
        .process_group(0)
        .spawn()
        .map_err(|e| Error::io(Path::new("sh"), e))?;

    let limit = Duration::from_secs_f64(spec.timeout_secs);
    let mut pause = Duration::from_millis(5);
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| Error::io(Path::new("sh"), e))? {
            break status;
        }
        if start.elapsed() >= limit {
            kill_group(child.id());
            let _ = child.wait();
            log::warn!("model {} case {case_id}: timed out after {:.1} s", spec.name, spec.timeout_secs);
            return Err(Error::ModelTimeout(spec.timeout_secs));
        }
        std::thread::sleep(pause.min(limit.saturating_sub(start.elapsed())));
        pause = (pause * 2).min(Duration::from_millis(100));
    };
    let wall_time = start.elapsed().as_secs_f64();
    // stray children still holding the group
    kill_group(child.id());

    let code = match status.code() {
        Some(c) => c,
        None => {
            log::warn!("model {} case {case_id}: signal {:?}", spec.name, status.signal());
            return Err(Error::ModelSignal);
        }
    };
    if code != 0 {
        log::warn!("model {} case {case_id}: exit {code}: {}", spec.name, stderr_tail(&err_log));
        return Err(Error::ModelExit(code));
    }
    if !output.is_file() {
        return Err(Error::ModelOutput(format!("model {} wrote no output for {case_id}", spec.name)));
    }
    let bad = |e: Error| Error::ModelOutput(format!("model {} case {case_id}: {e}", spec.name));
    let prediction = match spec.task {
        AnnotationKind::Detection => AnnotationSet::Detection(read_box_csv(&output).map_err(bad)?),
        AnnotationKind::Segmentation => {
            let labels = load_labels(&output).map_err(bad)?;
            let vol = load_volume(&input)?;
            if !labels.congruent_with(&vol) {
                return Err(Error::ModelOutput(format!(
                    "model {} case {case_id}: label grid {:?} does not match input {:?}",
                    spec.name,
                    labels.dims(),
                    vol.dims()
                )));
            }
            AnnotationSet::Segmentation(labels)
        }
    };
    Ok(ModelOutput { case_id: case_id.to_string(), prediction, wall_time, exit_status: code })
}
