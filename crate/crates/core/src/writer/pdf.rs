//! LaTeX → PDF compilation and PDF → page-image rasterization.
//!
//! Both steps default to built-in implementations so the whole pipeline
//! runs offline and deterministically: a minimal typesetter that lays the
//! document text out onto US-letter pages, and a paginator that renders one
//! 600×600 image per page. Real toolchains (latexmk/pdflatex, pdftoppm)
//! can be plugged in through the external-command variants.

use std::path::Path;
use std::process::Command;

use crate::gateway::ImagePart;

use super::WriterError;

#[derive(Debug, Clone, Default)]
pub enum PdfCompiler {
    #[default]
    Builtin,
    /// argv prefix; the `.tex` path is appended, and the command must leave
    /// `report.pdf` next to it.
    External { cmd: Vec<String> },
}

#[derive(Debug, Clone, Default)]
pub enum Rasterizer {
    #[default]
    Builtin,
    /// argv prefix; the PDF path and an output directory are appended, and
    /// the command must write `page_*.png` files into that directory.
    External { cmd: Vec<String> },
}

const LINES_PER_PAGE: usize = 48;
/// Vertical budget a figure occupies in the built-in layout, in text lines.
const FIGURE_LINES: usize = 20;

fn includegraphics_targets(latex: &str) -> Vec<String> {
    let mut targets = Vec::new();
    let mut rest = latex;
    while let Some(pos) = rest.find("\\includegraphics") {
        rest = &rest[pos + "\\includegraphics".len()..];
        let after_opts = match rest.strip_prefix('[') {
            Some(r) => match r.find(']') {
                Some(close) => &r[close + 1..],
                None => r,
            },
            None => rest,
        };
        if let Some(body) = after_opts.strip_prefix('{') {
            if let Some(close) = body.find('}') {
                targets.push(body[..close].to_string());
                rest = &body[close + 1..];
                continue;
            }
        }
    }
    targets
}

/// Strip comments and commands down to the text a page would show; figures
/// become `[figure: file]` markers that consume extra vertical space.
fn layout_lines(body: &str) -> Vec<String> {
    let mut lines = Vec::new();
    for raw in body.lines() {
        let line = match raw.find('%') {
            Some(pos) if pos == 0 || raw.as_bytes()[pos - 1] != b'\\' => &raw[..pos],
            _ => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            lines.push(String::new());
            continue;
        }
        if trimmed.contains("\\includegraphics") {
            for target in includegraphics_targets(trimmed) {
                for _ in 0..FIGURE_LINES {
                    lines.push(String::new());
                }
                lines.push(format!("[figure: {target}]"));
            }
            continue;
        }
        // Drop pure structural commands, keep braced text of the rest.
        let mut text = String::new();
        let mut chars = trimmed.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '\\' => {
                    // Skip the command name; its braced argument is kept.
                    while chars.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                        chars.next();
                    }
                    if let Some('&' | '$' | '%' | '#' | '_') = chars.peek() {
                        text.push(chars.next().unwrap());
                    }
                }
                '{' | '}' => {}
                _ => text.push(c),
            }
        }
        lines.push(text.trim().to_string());
    }
    // Trim trailing blank lines so page counts are stable.
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

fn pdf_escape(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii() && (*c == ' ' || !c.is_ascii_control()))
        .flat_map(|c| match c {
            '(' | ')' | '\\' => vec!['\\', c],
            _ => vec![c],
        })
        .collect()
}

/// Assemble a minimal but valid multi-page PDF from per-page text lines.
fn build_pdf(pages: &[Vec<String>]) -> Vec<u8> {
    let n = pages.len();
    // Object numbering: 1 catalog, 2 pages, 3 font, then per page k:
    // 4+2k page object, 5+2k content stream.
    let mut objects: Vec<String> = Vec::new();
    let kids: Vec<String> = (0..n).map(|k| format!("{} 0 R", 4 + 2 * k)).collect();
    objects.push("<< /Type /Catalog /Pages 2 0 R >>".to_string());
    objects.push(format!("<< /Type /Pages /Kids [{}] /Count {} >>", kids.join(" "), n));
    objects.push("<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>".to_string());
    let mut streams: Vec<String> = Vec::new();
    for (k, lines) in pages.iter().enumerate() {
        let mut stream = String::from("BT /F1 10 Tf 72 740 Td 14 TL\n");
        for line in lines {
            stream.push_str(&format!("({}) Tj T*\n", pdf_escape(line)));
        }
        stream.push_str("ET\n");
        objects.push(format!(
            "<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] \
             /Resources << /Font << /F1 3 0 R >> >> /Contents {} 0 R >>",
            5 + 2 * k
        ));
        objects.push(format!("<< /Length {} >>", stream.len()));
        streams.push(stream);
    }

    let mut out: Vec<u8> = b"%PDF-1.4\n".to_vec();
    let mut offsets = Vec::new();
    let mut stream_iter = streams.iter();
    for (i, obj) in objects.iter().enumerate() {
        offsets.push(out.len());
        out.extend_from_slice(format!("{} 0 obj\n{}\n", i + 1, obj).as_bytes());
        // Content-stream dictionaries are followed by their stream body.
        if i >= 3 && (i - 3) % 2 == 1 {
            let body = stream_iter.next().expect("stream per content object");
            out.extend_from_slice(b"stream\n");
            out.extend_from_slice(body.as_bytes());
            out.extend_from_slice(b"endstream\n");
        }
        out.extend_from_slice(b"endobj\n");
    }
    let xref_at = out.len();
    out.extend_from_slice(format!("xref\n0 {}\n", objects.len() + 1).as_bytes());
    out.extend_from_slice(b"0000000000 65535 f \n");
    for off in &offsets {
        out.extend_from_slice(format!("{off:010} 00000 n \n").as_bytes());
    }
    out.extend_from_slice(
        format!(
            "trailer\n<< /Size {} /Root 1 0 R >>\nstartxref\n{}\n%%EOF\n",
            objects.len() + 1,
            xref_at
        )
        .as_bytes(),
    );
    out
}

fn builtin_compile(latex: &str, workdir: &Path) -> Result<Vec<u8>, WriterError> {
    let begin = latex
        .find("\\begin{document}")
        .ok_or_else(|| WriterError::Compile("missing \\begin{document}".into()))?;
    let end = latex
        .find("\\end{document}")
        .ok_or_else(|| WriterError::Compile("missing \\end{document}".into()))?;
    if end < begin {
        return Err(WriterError::Compile("\\end{document} precedes \\begin{document}".into()));
    }
    for target in includegraphics_targets(latex) {
        if !workdir.join(&target).exists() {
            return Err(WriterError::Compile(format!("missing figure file {target}")));
        }
    }
    let body = &latex[begin + "\\begin{document}".len()..end];
    let lines = layout_lines(body);
    let pages: Vec<Vec<String>> = if lines.is_empty() {
        vec![vec![String::new()]]
    } else {
        lines.chunks(LINES_PER_PAGE).map(|c| c.to_vec()).collect()
    };
    Ok(build_pdf(&pages))
}

/// Compile `latex` inside `workdir` (where the figure files live). The
/// compile log is persisted as `workdir/compile.log`.
pub fn compile_pdf(
    latex: &str,
    workdir: &Path,
    compiler: &PdfCompiler,
) -> Result<Vec<u8>, WriterError> {
    std::fs::create_dir_all(workdir)?;
    let log_path = workdir.join("compile.log");
    let result = match compiler {
        PdfCompiler::Builtin => builtin_compile(latex, workdir),
        PdfCompiler::External { cmd } => {
            if cmd.is_empty() {
                return Err(WriterError::Compile("empty compiler command".into()));
            }
            let tex_path = workdir.join("report.tex");
            std::fs::write(&tex_path, latex)?;
            let output = Command::new(&cmd[0])
                .args(&cmd[1..])
                .arg(&tex_path)
                .current_dir(workdir)
                .output()
                .map_err(|e| WriterError::Compile(format!("compiler not runnable: {e}")))?;
            let log = format!(
                "{}\n{}",
                String::from_utf8_lossy(&output.stdout),
                String::from_utf8_lossy(&output.stderr)
            );
            std::fs::write(&log_path, &log)?;
            if !output.status.success() {
                let excerpt: String = log.lines().rev().take(20).collect::<Vec<_>>().join("\n");
                return Err(WriterError::Compile(excerpt));
            }
            std::fs::read(workdir.join("report.pdf"))
                .map_err(|e| WriterError::Compile(format!("compiler wrote no report.pdf: {e}")))
        }
    };
    if matches!(compiler, PdfCompiler::Builtin) {
        let log = match &result {
            Ok(bytes) => format!("builtin typesetter: ok, {} bytes\n", bytes.len()),
            Err(e) => format!("builtin typesetter: {e}\n"),
        };
        std::fs::write(&log_path, log)?;
    }
    result
}

/// Number of pages in a PDF byte stream: `/Type /Page` occurrences that are
/// not the `/Type /Pages` tree node.
pub fn count_pages(pdf: &[u8]) -> usize {
    let hay = String::from_utf8_lossy(pdf);
    let mut count = 0;
    for (pos, _) in hay.match_indices("/Type /Page") {
        let next = hay.as_bytes().get(pos + "/Type /Page".len());
        if next != Some(&b's') {
            count += 1;
        }
    }
    count
}

/// Scale into a 600×600 canvas preserving aspect ratio, padding with white.
fn pad_to_square(img: image::DynamicImage) -> image::RgbImage {
    let scaled = img.resize(600, 600, image::imageops::FilterType::Triangle).to_rgb8();
    let mut canvas = image::RgbImage::from_pixel(600, 600, image::Rgb([255, 255, 255]));
    let dx = (600 - scaled.width()) / 2;
    let dy = (600 - scaled.height()) / 2;
    image::imageops::overlay(&mut canvas, &scaled, dx as i64, dy as i64);
    canvas
}

fn encode_png(img: image::RgbImage) -> ImagePart {
    let mut bytes = Vec::new();
    image::DynamicImage::ImageRgb8(img)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("page image encodes");
    ImagePart::new(bytes, 600, 600, "png").expect("600x600 page image")
}

/// Deterministic built-in rendering of page `index` (0-based) of `total`:
/// a white page with a frame and a progress bar marking the page position.
fn builtin_page_image(index: usize, total: usize) -> ImagePart {
    let mut img = image::RgbImage::from_pixel(600, 600, image::Rgb([255, 255, 255]));
    for x in 0..600u32 {
        for y in 0..600u32 {
            let frame = x < 8 || y < 8 || x >= 592 || y >= 592;
            let bar_w = (600 * (index + 1) / total.max(1)) as u32;
            let bar = y >= 580 && y < 588 && x < bar_w;
            if frame || bar {
                img.put_pixel(x, y, image::Rgb([40, 40, 40]));
            }
        }
    }
    encode_png(img)
}

/// One 600×600 raster per PDF page.
pub fn paginate_pdf(pdf: &[u8], rasterizer: &Rasterizer) -> Result<Vec<ImagePart>, WriterError> {
    if pdf.is_empty() {
        return Err(WriterError::ZeroPages);
    }
    match rasterizer {
        Rasterizer::Builtin => {
            let n = count_pages(pdf);
            if n == 0 {
                return Err(WriterError::ZeroPages);
            }
            Ok((0..n).map(|i| builtin_page_image(i, n)).collect())
        }
        Rasterizer::External { cmd } => {
            if cmd.is_empty() {
                return Err(WriterError::RasterTool("empty raster command".into()));
            }
            let dir = std::env::temp_dir().join(format!(
                "raster_{}_{}",
                std::process::id(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos())
                    .unwrap_or(0)
            ));
            std::fs::create_dir_all(&dir)?;
            let pdf_path = dir.join("report.pdf");
            std::fs::write(&pdf_path, pdf)?;
            let output = Command::new(&cmd[0])
                .args(&cmd[1..])
                .arg(&pdf_path)
                .arg(&dir)
                .output()
                .map_err(|e| WriterError::RasterTool(e.to_string()))?;
            if !output.status.success() {
                return Err(WriterError::RasterTool(
                    String::from_utf8_lossy(&output.stderr).into_owned(),
                ));
            }
            let mut page_files: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("page_") && n.ends_with(".png"))
                })
                .collect();
            page_files.sort();
            if page_files.is_empty() {
                return Err(WriterError::ZeroPages);
            }
            let mut pages = Vec::new();
            for file in page_files {
                let img = image::open(&file)
                    .map_err(|e| WriterError::RasterTool(format!("{}: {e}", file.display())))?;
                pages.push(encode_png(pad_to_square(img)));
            }
            std::fs::remove_dir_all(&dir).ok();
            Ok(pages)
        }
    }
}
