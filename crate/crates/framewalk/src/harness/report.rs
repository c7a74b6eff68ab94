//! Report emission: CSV and markdown with the canonical category column
//! order and fixed decimal places (PSNR 2, SSIM 4).

use std::fs;
use std::path::Path;

use crate::degrade::CategoryLabel;
use crate::error::{Error, Result};
use crate::metrics::{report_from_categories, CategoryScore, EvalReport};

/// Decimal fixed-point formatting with half-up rounding on the decimal
/// representation: `fmt_fixed(23.345, 2) == "23.35"`. Plain `{:.2}`
/// formatting would round the underlying binary value down instead.
pub fn fmt_fixed(v: f64, dp: usize) -> String {
    let expanded = format!("{:.*}", dp + 8, v);
    let neg = expanded.starts_with('-');
    let body = expanded.trim_start_matches('-');
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    let kept: String = frac_part.chars().take(dp).collect();
    let next = frac_part.chars().nth(dp).unwrap_or('0');

    let mut digits: Vec<u8> = format!("{int_part}{kept}").into_bytes();
    if next >= '5' {
        // increment the decimal string with carry
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let s = String::from_utf8(digits).expect("ascii digits");
    let split = s.len() - dp;
    let mut out = String::new();
    if neg && s.bytes().any(|b| b != b'0') {
        out.push('-');
    }
    out.push_str(&s[..split]);
    if dp > 0 {
        out.push('.');
        out.push_str(&s[split..]);
    }
    out
}

fn check_nonempty(report: &EvalReport) -> Result<()> {
    if report.categories.is_empty() {
        return Err(Error::Eval("report covers no categories".into()));
    }
    Ok(())
}

/// CSV rows `category,count,psnr,ssim` in canonical order, with a final
/// `Average` row (count = total items).
pub fn report_to_csv(report: &EvalReport) -> Result<String> {
    check_nonempty(report)?;
    let mut out = String::from("category,count,psnr,ssim\n");
    for c in &report.categories {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.category.name(),
            c.count,
            fmt_fixed(c.psnr_mean, 2),
            fmt_fixed(c.ssim_mean, 4)
        ));
    }
    let total: usize = report.categories.iter().map(|c| c.count).sum();
    out.push_str(&format!(
        "Average,{},{},{}\n",
        total,
        fmt_fixed(report.overall_psnr, 2),
        fmt_fixed(report.overall_ssim, 4)
    ));
    Ok(out)
}

/// Markdown table with one column per category (canonical order) plus
/// Average, and one row each for PSNR and SSIM.
pub fn report_to_markdown(report: &EvalReport) -> Result<String> {
    check_nonempty(report)?;
    let mut header = String::from("| Metric |");
    let mut rule = String::from("| --- |");
    let mut psnr_row = String::from("| PSNR |");
    let mut ssim_row = String::from("| SSIM |");
    for c in &report.categories {
        header.push_str(&format!(" {} |", c.category.name()));
        rule.push_str(" --- |");
        psnr_row.push_str(&format!(" {} |", fmt_fixed(c.psnr_mean, 2)));
        ssim_row.push_str(&format!(" {} |", fmt_fixed(c.ssim_mean, 4)));
    }
    header.push_str(" Average |");
    rule.push_str(" --- |");
    psnr_row.push_str(&format!(" {} |", fmt_fixed(report.overall_psnr, 2)));
    ssim_row.push_str(&format!(" {} |", fmt_fixed(report.overall_ssim, 4)));
    Ok(format!("{header}\n{rule}\n{psnr_row}\n{ssim_row}\n"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

/// Write a report file; byte output is deterministic for a given report.
pub fn emit_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Csv => report_to_csv(report)?,
        ReportFormat::Markdown => report_to_markdown(report)?,
    };
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a CSV previously written by [`report_to_csv`] (the Average row is
/// recomputed, not trusted).
pub fn parse_report_csv(text: &str) -> Result<EvalReport> {
    let mut categories = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: idx + 1, msg: format!("expected 4 fields, got {}", fields.len()) });
        }
        if fields[0] == "Average" {
            continue;
        }
        let category = CategoryLabel::parse(fields[0])
            .map_err(|e| Error::Parse { line: idx + 1, msg: e.to_string() })?;
        let parse_num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad number `{s}`") })
        };
        categories.push(CategoryScore {
            category,
            count: fields[1]
                .parse()
                .map_err(|_| Error::Parse { line: idx + 1, msg: format!("bad count `{}`", fields[1]) })?,
            psnr_mean: parse_num(fields[2])?,
            ssim_mean: parse_num(fields[3])?,
        });
    }
    if categories.is_empty() {
        return Err(Error::Eval("report CSV has no category rows".into()));
    }
    Ok(report_from_categories(categories))
}
