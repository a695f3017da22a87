//! Static single-file HTML rendering of an explanation. Words pushing
//! toward class 1 are orange, toward class 0 blue.

use std::fmt::Write as _;

use super::Explanation;

const ORANGE: (u8, u8, u8) = (255, 127, 14);
const BLUE: (u8, u8, u8) = (31, 119, 180);

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

fn tint(weight: f64, max_abs: f64) -> String {
    let (r, g, b) = if weight > 0.0 { ORANGE } else { BLUE };
    let alpha = if max_abs > 0.0 { weight.abs() / max_abs } else { 0.0 };
    format!("rgba({r},{g},{b},{alpha:.3})")
}

/// Class of a word's highlight: `class-1` for positive weight, `class-0`
/// for negative, `None` for words without a reported weight or zero weight.
pub fn highlight_class(weight: f64) -> Option<&'static str> {
    if weight > 0.0 {
        Some("class-1")
    } else if weight < 0.0 {
        Some("class-0")
    } else {
        None
    }
}

pub fn render_html(e: &Explanation) -> String {
    let max_abs = e.words.iter().map(|w| w.weight.abs()).fold(0.0, f64::max);
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n");
    h.push_str("<title>Prediction explanation</title>\n</head>\n");
    h.push_str("<body style=\"font-family:sans-serif;max-width:860px;margin:2em auto;color:#222\">\n");

    let p1 = e.probability;
    let _ = writeln!(
        h,
        "<h2 style=\"margin-bottom:0.3em\">Prediction probabilities</h2>\n\
         <table style=\"border-collapse:collapse\">\n\
         <tr><td style=\"padding:2px 8px\">class 0 (not misinformation)</td>\
         <td style=\"padding:2px 8px\"><div style=\"width:{w0:.1}px;height:14px;background:rgb({b0},{b1},{b2})\"></div></td>\
         <td style=\"padding:2px 8px\">{p0:.3}</td></tr>\n\
         <tr><td style=\"padding:2px 8px\">class 1 (misinformation)</td>\
         <td style=\"padding:2px 8px\"><div style=\"width:{w1:.1}px;height:14px;background:rgb({o0},{o1},{o2})\"></div></td>\
         <td style=\"padding:2px 8px\">{p1:.3}</td></tr>\n</table>",
        p0 = 1.0 - p1,
        w0 = 200.0 * (1.0 - p1).clamp(0.0, 1.0),
        w1 = 200.0 * p1.clamp(0.0, 1.0),
        b0 = BLUE.0,
        b1 = BLUE.1,
        b2 = BLUE.2,
        o0 = ORANGE.0,
        o1 = ORANGE.1,
        o2 = ORANGE.2,
    );

    h.push_str("<h2 style=\"margin-bottom:0.3em\">Word contributions</h2>\n<div>\n");
    for w in &e.words {
        let width = if max_abs > 0.0 { 240.0 * w.weight.abs() / max_abs } else { 0.0 };
        let (r, g, b) = if w.weight > 0.0 { ORANGE } else { BLUE };
        let side = if w.weight > 0.0 { "class 1" } else { "class 0" };
        let _ = writeln!(
            h,
            "<div class=\"bar\" style=\"display:flex;align-items:center;margin:2px 0\">\
             <span style=\"width:140px;text-align:right;padding-right:8px\">{word}</span>\
             <div title=\"{side}\" style=\"width:{width:.1}px;height:14px;background:rgb({r},{g},{b})\"></div>\
             <span style=\"padding-left:8px\">{weight:+.4}</span></div>",
            word = escape(&w.word),
            weight = w.weight,
        );
    }
    h.push_str("</div>\n");

    h.push_str("<h2 style=\"margin-bottom:0.3em\">Text with highlighted words</h2>\n<p style=\"line-height:1.9\">\n");
    for token in &e.tokens {
        let found = e.words.iter().find(|w| &w.word == token);
        match found.and_then(|w| highlight_class(w.weight).map(|c| (c, w.weight))) {
            Some((class, weight)) => {
                let _ = write!(
                    h,
                    "<span class=\"{class}\" style=\"background:{bg};padding:1px 3px;border-radius:3px\">{t}</span> ",
                    bg = tint(weight, max_abs),
                    t = escape(token),
                );
            }
            None => {
                let _ = write!(h, "<span>{}</span> ", escape(token));
            }
        }
    }
    h.push_str("\n</p>\n");
    let _ = writeln!(
        h,
        "<p style=\"color:#666;font-size:0.85em\">surrogate: {} &middot; fidelity R&sup2; {:.4} &middot; {} perturbations{} &middot; seed {}</p>",
        e.surrogate,
        e.fidelity,
        e.n_samples,
        if e.exhaustive { " (exhaustive)" } else { "" },
        e.seed,
    );
    let _ = writeln!(h, "<p style=\"color:#666;font-size:0.85em\">input: {}</p>", escape(&e.text));
    h.push_str("</body>\n</html>\n");
    h
}
