// SPDX-License-Identifier: MIT OR Apache-2.0

//! Human-readable attribution reports for terminals and browsers.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::attribution::AttributionResult;
use crate::error::{Error, Result};
use crate::mech::Heatmap;
use crate::segmenter::SegmentedContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Terminal,
    Html,
}

impl FromStr for ReportStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal" => Ok(ReportStyle::Terminal),
            "html" => Ok(ReportStyle::Html),
            other => Err(Error::InvalidArgument(format!("unknown report style {other:?}"))),
        }
    }
}

const HIGHLIGHT: &str = "\x1b[1;33m";
const RESET: &str = "\x1b[0m";

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Context with the `top_k` sentences highlighted and annotated with rank and
/// JSD, followed by the query, response and top-1 source.
pub fn render_report(
    ctx: &SegmentedContext,
    result: &AttributionResult,
    top_k: usize,
    style: ReportStyle,
) -> Result<String> {
    if result.scores.len() != ctx.len() {
        return Err(Error::LengthMismatch {
            left: result.scores.len(),
            right: ctx.len(),
        });
    }
    let ranked = result.top_k(top_k);
    let rank_of = |i: usize| ranked.iter().position(|s| s.index == i).map(|r| r + 1);
    let text = |s: &str| match style {
        ReportStyle::Terminal => s.to_string(),
        ReportStyle::Html => escape_html(s),
    };

    let mut body = String::new();
    for doc in &ctx.docs {
        let mut cursor = 0;
        let mut line = String::new();
        for s in ctx.sentences.iter().filter(|s| s.doc_index == doc.doc_index) {
            line.push_str(&text(&doc.body[cursor..s.span.start]));
            let inner = text(&doc.body[s.span.start..s.span.end]);
            match (rank_of(s.index), style) {
                (Some(r), ReportStyle::Terminal) => {
                    let _ = write!(line, "{HIGHLIGHT}{inner}{RESET} [#{r} JSD={:.6}]", result.scores[s.index].jsd);
                }
                (Some(r), ReportStyle::Html) => {
                    let _ = write!(
                        line,
                        "<mark data-rank=\"{r}\" data-index=\"{}\">{inner}</mark><sup>#{r} JSD={:.6}</sup>",
                        s.index, result.scores[s.index].jsd
                    );
                }
                (None, _) => line.push_str(&inner),
            }
            cursor = s.span.end;
        }
        line.push_str(&text(&doc.body[cursor..]));
        match style {
            ReportStyle::Terminal => {
                if let Some(t) = &doc.title {
                    let _ = writeln!(body, "Title: {t}");
                }
                let _ = writeln!(body, "{line}\n");
            }
            ReportStyle::Html => {
                body.push_str("<section class=\"doc\">\n");
                if let Some(t) = &doc.title {
                    let _ = writeln!(body, "<h3>{}</h3>", escape_html(t));
                }
                let _ = writeln!(body, "<p>{line}</p>\n</section>");
            }
        }
    }

    let top = &result.scores[result.top];
    let mut out = String::new();
    match style {
        ReportStyle::Terminal => {
            out.push_str("== Context ==\n");
            out.push_str(&body);
            let _ = writeln!(out, "== Query ==\n{}\n", result.query);
            let _ = writeln!(out, "== Response ==\n{}\n", result.response);
            let _ = writeln!(out, "== Top-1 source ==\n[{}] {} (JSD={:.6})", top.index, top.text, top.jsd);
        }
        ReportStyle::Html => {
            out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Attribution report</title>\n");
            out.push_str("<style>mark{background:#ffe08a}sup{color:#555}</style>\n</head>\n<body>\n");
            let _ = writeln!(out, "<h2>Context</h2>\n{body}");
            let _ = writeln!(out, "<h2>Query</h2>\n<p>{}</p>", escape_html(&result.query));
            let _ = writeln!(out, "<h2>Response</h2>\n<p>{}</p>", escape_html(&result.response));
            let _ = writeln!(
                out,
                "<h2>Top-1 source</h2>\n<p>[{}] {} (JSD={:.6})</p>",
                top.index,
                escape_html(&top.text),
                top.jsd
            );
            out.push_str("</body>\n</html>\n");
        }
    }
    Ok(out)
}

/// Heatmap as an aligned text table or an HTML table.
pub fn render_heatmap(map: &Heatmap, style: ReportStyle) -> String {
    let mut out = String::new();
    match style {
        ReportStyle::Terminal => {
            out.push_str("layer");
            for h in 0..map.heads {
                let _ = write!(out, " {:>9}", format!("H{h}"));
            }
            let _ = writeln!(out, " {:>9}", "MLP");
            for l in 0..map.layers {
                let _ = write!(out, "{:<5}", format!("L{l}"));
                for h in 0..map.heads {
                    let _ = write!(out, " {:>9.6}", map.head(l, h));
                }
                let _ = writeln!(out, " {:>9.6}", map.mlp[l]);
            }
        }
        ReportStyle::Html => {
            out.push_str("<table class=\"heatmap\">\n<tr><th>layer</th>");
            for h in 0..map.heads {
                let _ = write!(out, "<th>H{h}</th>");
            }
            out.push_str("<th>MLP</th></tr>\n");
            for l in 0..map.layers {
                let _ = write!(out, "<tr><th>L{l}</th>");
                for h in 0..map.heads {
                    let _ = write!(out, "<td>{:.6}</td>", map.head(l, h));
                }
                let _ = writeln!(out, "<td>{:.6}</td></tr>", map.mlp[l]);
            }
            out.push_str("</table>\n");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn html_escaping() {
        assert_eq!(escape_html("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn style_names() {
        assert_eq!("html".parse::<ReportStyle>().unwrap(), ReportStyle::Html);
        assert!("pdf".parse::<ReportStyle>().is_err());
    }
}
