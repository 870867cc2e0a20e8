//! Figure-script execution: each block runs through a configured
//! interpreter in its own subdirectory with a per-block timeout; failures
//! degrade to a deterministic placeholder image so the pipeline proceeds.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ScriptBlock, WriterError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FigureFile {
    pub ordinal: usize,
    pub path: PathBuf,
    /// True iff the script exited 0 and produced its expected output file.
    pub success: bool,
    /// Captured stderr for failed blocks.
    pub stderr: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Interpreter argv prefix; the script path is appended.
    pub interpreter_cmd: Vec<String>,
    pub timeout: Duration,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { interpreter_cmd: vec!["python3".into()], timeout: Duration::from_secs(60) }
    }
}

/// Deterministic 600×450 light-gray placeholder with a dark border.
pub fn placeholder_png() -> Vec<u8> {
    let (w, h) = (600u32, 450u32);
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        if x < 4 || y < 4 || x >= w - 4 || y >= h - 4 {
            image::Rgb([60, 60, 60])
        } else {
            image::Rgb([230, 230, 230])
        }
    });
    let mut bytes = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("placeholder encodes");
    bytes
}

fn run_with_timeout(
    mut cmd: Command,
    timeout: Duration,
) -> Result<(bool, String), WriterError> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| WriterError::InterpreterMissing(e.to_string()))?;
    let start = Instant::now();
    loop {
        match child.try_wait()? {
            Some(status) => {
                let mut stderr = String::new();
                if let Some(mut pipe) = child.stderr.take() {
                    use std::io::Read;
                    pipe.read_to_string(&mut stderr).ok();
                }
                return Ok((status.success(), stderr));
            }
            None => {
                if start.elapsed() >= timeout {
                    child.kill().ok();
                    child.wait().ok();
                    return Ok((false, format!("timed out after {}s", timeout.as_secs())));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

/// Run every script block and leave `fig_<k>.png` files in `workdir`.
/// Success requires exit code 0 AND the expected output file; anything else
/// records the failure and substitutes a placeholder image.
pub fn render_figures(
    blocks: &[ScriptBlock],
    workdir: &Path,
    options: &RenderOptions,
) -> Result<Vec<FigureFile>, WriterError> {
    if options.interpreter_cmd.is_empty() {
        return Err(WriterError::InterpreterMissing("no interpreter configured".into()));
    }
    std::fs::create_dir_all(workdir)?;
    let mut figures = Vec::new();
    for block in blocks {
        let subdir = workdir.join(format!("block_{}", block.ordinal));
        std::fs::create_dir_all(&subdir)?;
        let script_path = subdir.join("figure_script");
        std::fs::write(&script_path, &block.code)?;

        let mut cmd = Command::new(&options.interpreter_cmd[0]);
        cmd.args(&options.interpreter_cmd[1..]).arg(&script_path).current_dir(&subdir);
        let (exited_ok, stderr) = run_with_timeout(cmd, options.timeout)?;

        let produced = subdir.join(&block.expected_output_file);
        let target = workdir.join(&block.expected_output_file);
        let success = exited_ok && produced.exists();
        if success {
            std::fs::copy(&produced, &target)?;
            figures.push(FigureFile { ordinal: block.ordinal, path: target, success, stderr: None });
        } else {
            std::fs::write(&target, placeholder_png())?;
            let detail = if exited_ok && !produced.exists() {
                format!("script exited 0 but did not write {}", block.expected_output_file)
            } else {
                stderr
            };
            figures.push(FigureFile {
                ordinal: block.ordinal,
                path: target,
                success: false,
                stderr: Some(detail),
            });
        }
    }
    Ok(figures)
}
