//! JSON manifests for symbols. Coefficients live in `.pfld` files next to
//! the manifest; multipliers are named builtins:
//!
//! * `one`
//! * `japanese_bracket_pow s`
//! * `monomial a1 [a2 [a3]]`
//! * `cone_cutoff d1 d2 [d3] aperture`
//! * `table FILE` (lattice values stored as a complex `.pfld`)
//! * `banded j <builtin>`

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pfld::{read_pfld, write_pfld};
use crate::PeriodicField;

use super::symbol::{Multiplier, Regularity, SymbolGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolManifest {
    pub order: f64,
    pub regularity: Regularity,
    pub terms: Vec<TermEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub coefficient: String,
    pub multiplier: String,
}

fn bad(spec: &str, why: &str) -> Error {
    Error::Config(format!("multiplier '{spec}': {why}"))
}

fn floats(spec: &str, words: &[&str]) -> Result<Vec<f64>> {
    words
        .iter()
        .map(|w| w.parse::<f64>().map_err(|_| bad(spec, &format!("'{w}' is not a number"))))
        .collect()
}

/// Parses a builtin multiplier expression. `table` entries are resolved
/// relative to `base`.
pub fn parse_multiplier(spec: &str, base: &Path) -> Result<Multiplier> {
    let words: Vec<&str> = spec.split_whitespace().collect();
    let (head, rest) = words
        .split_first()
        .ok_or_else(|| bad(spec, "empty expression"))?;
    match *head {
        "one" if rest.is_empty() => Ok(Multiplier::One),
        "japanese_bracket_pow" => match floats(spec, rest)?.as_slice() {
            [s] => Ok(Multiplier::JapaneseBracketPow(*s)),
            _ => Err(bad(spec, "expects one exponent")),
        },
        "monomial" => {
            if rest.is_empty() || rest.len() > 3 {
                return Err(bad(spec, "expects 1 to 3 exponents"));
            }
            let mut alpha = [0u32; 3];
            for (a, w) in rest.iter().enumerate() {
                alpha[a] = w
                    .parse()
                    .map_err(|_| bad(spec, "exponents must be nonnegative integers"))?;
            }
            Ok(Multiplier::Monomial(alpha))
        }
        "cone_cutoff" => {
            let v = floats(spec, rest)?;
            if v.len() < 3 || v.len() > 4 {
                return Err(bad(spec, "expects a 2 or 3 component direction and an aperture"));
            }
            let mut direction = [0.0; 3];
            direction[..v.len() - 1].copy_from_slice(&v[..v.len() - 1]);
            Ok(Multiplier::ConeCutoff {
                direction,
                aperture: v[v.len() - 1],
            })
        }
        "table" if rest.len() == 1 => {
            let field = read_pfld(&base.join(rest[0]))?;
            Ok(Multiplier::Table(field.into_values()))
        }
        "banded" if rest.len() >= 2 => {
            let band = rest[0]
                .parse()
                .map_err(|_| bad(spec, "band index must be an integer"))?;
            let inner = rest[1..].join(" ");
            Ok(Multiplier::Banded {
                band,
                base: Box::new(parse_multiplier(&inner, base)?),
            })
        }
        _ => Err(bad(spec, "unknown builtin")),
    }
}

fn render_multiplier(
    m: &Multiplier,
    dir: &Path,
    stem: &str,
    grid: crate::Grid,
) -> Result<String> {
    Ok(match m {
        Multiplier::One => "one".into(),
        Multiplier::JapaneseBracketPow(s) => format!("japanese_bracket_pow {s:?}"),
        Multiplier::Monomial(a) => format!("monomial {} {} {}", a[0], a[1], a[2]),
        Multiplier::ConeCutoff {
            direction,
            aperture,
        } => format!(
            "cone_cutoff {:?} {:?} {:?} {:?}",
            direction[0], direction[1], direction[2], aperture
        ),
        Multiplier::Table(values) => {
            let file = format!("{stem}_table.pfld");
            let field = PeriodicField::from_complex(grid, values.clone())?;
            write_pfld(&dir.join(&file), &field)?;
            format!("table {file}")
        }
        Multiplier::Banded { band, base } => {
            format!("banded {band} {}", render_multiplier(base, dir, stem, grid)?)
        }
    })
}

/// Writes `NAME.json` plus one coefficient file per term into `dir`.
pub fn save_symbol(dir: &Path, name: &str, symbol: &SymbolGrid) -> Result<SymbolManifest> {
    std::fs::create_dir_all(dir)?;
    let mut terms = Vec::new();
    for (i, t) in symbol.terms().iter().enumerate() {
        let stem = format!("{name}_term{i}");
        let coefficient = format!("{stem}.pfld");
        write_pfld(&dir.join(&coefficient), &t.coeff)?;
        let multiplier = render_multiplier(&t.multiplier, dir, &stem, symbol.grid())?;
        terms.push(TermEntry {
            coefficient,
            multiplier,
        });
    }
    let manifest = SymbolManifest {
        order: symbol.order(),
        regularity: symbol.regularity(),
        terms,
    };
    std::fs::write(
        dir.join(format!("{name}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn load_symbol(path: &Path) -> Result<SymbolGrid> {
    let text = std::fs::read_to_string(path)?;
    let manifest: SymbolManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut symbol: Option<SymbolGrid> = None;
    for t in &manifest.terms {
        let coeff = read_pfld(&base.join(&t.coefficient))?;
        let multiplier = parse_multiplier(&t.multiplier, base)?;
        let s = symbol.get_or_insert_with(|| {
            SymbolGrid::new(coeff.grid(), manifest.order, manifest.regularity)
        });
        s.push(coeff, multiplier)?;
    }
    symbol.ok_or_else(|| Error::Config("symbol manifest has no terms".into()))
}
