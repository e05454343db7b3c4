use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    validate, validate_merger, Market, MergerSpec, PassthroughMode, Product, ProductId,
    RevenueDiversionMatrix, FirmId, OUTSIDE,
};
use crate::ces::ShareTable;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    /// A directory holding `products.csv` and optionally `diversion.csv`.
    Csv,
}

impl Format {
    /// Guesses the format from the path: directories and `.csv` files are CSV.
    pub fn infer(path: &Path) -> Format {
        if path.is_dir() || path.extension().is_some_and(|e| e == "csv") {
            Format::Csv
        } else {
            Format::Json
        }
    }
}

/// Single-consumer expenditure shares from which diversion can be derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpenditureShares {
    /// Total category spending, including the outside option.
    pub budget: f64,
    /// Shares by product; `OUTSIDE` may be omitted and is then `1 - Σ shares`.
    pub shares: IndexMap<ProductId, f64>,
}

impl ExpenditureShares {
    pub fn to_share_table(&self) -> Result<ShareTable> {
        let mut shares = self.shares.clone();
        if !shares.contains_key(&ProductId::outside()) {
            let inside: f64 = shares.values().sum();
            shares.insert(ProductId::outside(), 1.0 - inside);
        }
        ShareTable::single(self.budget, shares)
    }
}

/// Everything a market file can carry.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedMarket {
    pub market: Market,
    pub diversion: RevenueDiversionMatrix,
    pub merger: Option<MergerSpec>,
    pub expenditure_shares: Option<ExpenditureShares>,
    /// Non-fatal notes raised while loading.
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    currency: Option<String>,
    products: Vec<ProductRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diversion: Option<DiversionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expenditure_shares: Option<ExpenditureShares>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    merger: Option<MergerRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductRecord {
    id: String,
    firm: String,
    revenue: f64,
    margin: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiversionRecord {
    order: Vec<String>,
    /// `null` marks an unknown entry.
    matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MergerRecord {
    firm_a: String,
    firm_b: String,
    #[serde(default)]
    efficiencies: IndexMap<String, f64>,
    #[serde(default = "default_passthrough")]
    passthrough: PassthroughRecord,
}

fn default_passthrough() -> PassthroughRecord {
    PassthroughRecord::Named("identity".to_owned())
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PassthroughRecord {
    Named(String),
    Matrix {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<Vec<String>>,
    },
}

fn schema(field: impl Into<String>, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        field: field.into(),
        location: location.into(),
        message: message.into(),
    }
}

/// Loads a market (plus diversion and optional merger) from disk.
pub fn load_market(path: impl AsRef<Path>, format: Format) -> Result<LoadedMarket> {
    let path = path.as_ref();
    match format {
        Format::Json => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            market_from_json_str(&text)
        }
        Format::Csv => load_csv(path),
    }
}

/// Parses the JSON market format.
pub fn market_from_json_str(text: &str) -> Result<LoadedMarket> {
    let file: MarketFile = serde_json::from_str(text).map_err(|e| {
        schema(
            "document",
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    assemble(file)
}

fn assemble(file: MarketFile) -> Result<LoadedMarket> {
    if file.products.is_empty() {
        return Err(Error::NoProducts);
    }
    let market = Market {
        products: file
            .products
            .iter()
            .map(|p| Product::new(&p.id, &p.firm, p.revenue, p.margin))
            .collect(),
        currency: file.currency,
    };
    let mut warnings = Vec::new();
    let mut order = market.ids();

    let diversion = match (&file.diversion, &file.expenditure_shares) {
        (Some(rec), shares) => {
            if shares.is_some() {
                warnings.push(
                    "diversion supplied directly and through expenditure shares; using the supplied matrix"
                        .to_owned(),
                );
            }
            let d = diversion_from_record(rec)?;
            for id in d.order() {
                if !id.is_outside() && market.index_of(id).is_none() {
                    return Err(Error::UnknownProduct(id.to_string()));
                }
            }
            if d.has_outside() {
                order.push(ProductId::outside());
            }
            d.aligned_to(&order)
        }
        (None, Some(shares)) => {
            for id in shares.shares.keys() {
                if !id.is_outside() && market.index_of(id).is_none() {
                    return Err(Error::UnknownProduct(id.to_string()));
                }
            }
            let table = shares.to_share_table()?;
            order.push(ProductId::outside());
            crate::ces::revenue_diversion(&table)?.aligned_to(&order)
        }
        (None, None) => RevenueDiversionMatrix::unknown(order),
    };

    let merger = file.merger.map(|m| merger_from_record(&market, m)).transpose()?;

    let mut violations = validate(&market, &diversion);
    if let Some(m) = &merger {
        violations.extend(validate_merger(&market, m));
    }
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(LoadedMarket {
        market,
        diversion,
        merger,
        expenditure_shares: file.expenditure_shares,
        warnings,
    })
}

fn diversion_from_record(rec: &DiversionRecord) -> Result<RevenueDiversionMatrix> {
    let n = rec.order.len();
    if rec.matrix.len() != n {
        return Err(schema(
            "diversion.matrix",
            "rows",
            format!("{} rows for {} products in order", rec.matrix.len(), n),
        ));
    }
    for (i, row) in rec.matrix.iter().enumerate() {
        if row.len() != n {
            return Err(schema(
                "diversion.matrix",
                format!("row {i}"),
                format!("{} entries, expected {n}", row.len()),
            ));
        }
    }
    let values = DMatrix::from_fn(n, n, |i, j| rec.matrix[i][j].unwrap_or(f64::NAN));
    let order = rec.order.iter().map(|s| ProductId::new(s.as_str())).collect();
    RevenueDiversionMatrix::new(order, values)
}

fn merger_from_record(market: &Market, rec: MergerRecord) -> Result<MergerSpec> {
    for firm in [&rec.firm_a, &rec.firm_b] {
        if !market.has_firm(&FirmId::new(firm.as_str())) {
            return Err(Error::UnknownFirm(firm.clone()));
        }
    }
    let mut merger = MergerSpec::new(&rec.firm_a, &rec.firm_b);
    for (id, v) in rec.efficiencies {
        let id = ProductId::new(id);
        if market.index_of(&id).is_none() {
            return Err(Error::UnknownProduct(id.to_string()));
        }
        merger.efficiencies.insert(id, v);
    }
    merger.passthrough = match rec.passthrough {
        PassthroughRecord::Named(name) => match name.as_str() {
            "identity" => PassthroughMode::Identity,
            "ces" => PassthroughMode::CesClosedForm,
            other => {
                return Err(schema(
                    "merger.passthrough",
                    "merger",
                    format!("expected \"identity\", \"ces\" or a matrix, got \"{other}\""),
                ))
            }
        },
        PassthroughRecord::Matrix { matrix, order } => {
            let order = match order {
                Some(o) => o.into_iter().map(ProductId::new).collect(),
                None => merger.merging_products(market),
            };
            let n = order.len();
            if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                return Err(schema(
                    "merger.passthrough.matrix",
                    "merger",
                    format!("expected a {n}x{n} matrix over the merging products"),
                ));
            }
            PassthroughMode::Explicit {
                order,
                matrix: DMatrix::from_fn(n, n, |i, j| matrix[i][j]),
            }
        }
    };
    Ok(merger)
}

fn to_file(loaded: &LoadedMarket) -> MarketFile {
    let d = &loaded.diversion;
    let has_known_off_diagonal = (0..d.order().len())
        .any(|i| (0..d.order().len()).any(|j| i != j && !d.values()[(i, j)].is_nan()));
    // A derived matrix is regenerated from the shares on load.
    let write_diversion = has_known_off_diagonal && loaded.expenditure_shares.is_none();
    MarketFile {
        currency: loaded.market.currency.clone(),
        products: loaded
            .market
            .products
            .iter()
            .map(|p| ProductRecord {
                id: p.id.to_string(),
                firm: p.firm.to_string(),
                revenue: p.revenue,
                margin: p.margin,
            })
            .collect(),
        diversion: write_diversion.then(|| DiversionRecord {
            order: d.order().iter().map(ToString::to_string).collect(),
            matrix: (0..d.order().len())
                .map(|i| {
                    (0..d.order().len())
                        .map(|j| {
                            let v = d.values()[(i, j)];
                            (!v.is_nan()).then_some(v)
                        })
                        .collect()
                })
                .collect(),
        }),
        expenditure_shares: loaded.expenditure_shares.clone(),
        merger: loaded.merger.as_ref().map(|m| MergerRecord {
            firm_a: m.firm_a.to_string(),
            firm_b: m.firm_b.to_string(),
            efficiencies: m.efficiencies.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            passthrough: match &m.passthrough {
                PassthroughMode::Identity => PassthroughRecord::Named("identity".to_owned()),
                PassthroughMode::CesClosedForm => PassthroughRecord::Named("ces".to_owned()),
                PassthroughMode::Explicit { order, matrix } => PassthroughRecord::Matrix {
                    matrix: (0..matrix.nrows())
                        .map(|i| (0..matrix.ncols()).map(|j| matrix[(i, j)]).collect())
                        .collect(),
                    order: Some(order.iter().map(ToString::to_string).collect()),
                },
            },
        }),
    }
}

/// Serializes to the JSON market format. Numbers round-trip exactly.
pub fn market_to_json_string(loaded: &LoadedMarket) -> String {
    serde_json::to_string_pretty(&to_file(loaded)).expect("market serializes")
}

pub fn save_market(path: impl AsRef<Path>, loaded: &LoadedMarket) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, market_to_json_string(loaded) + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct DiversionRow {
    from: String,
    to: String,
    value: f64,
}

fn load_csv(path: &Path) -> Result<LoadedMarket> {
    let (products_path, dir): (PathBuf, PathBuf) = if path.is_dir() {
        (path.join("products.csv"), path.to_path_buf())
    } else {
        (
            path.to_path_buf(),
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        )
    };
    let mut products = Vec::new();
    let mut reader = csv::Reader::from_path(&products_path).map_err(|e| csv_error(&products_path, e))?;
    for (row, rec) in reader.deserialize::<ProductRecord>().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => csv_error(&products_path, e),
            _ => schema("products.csv", format!("row {}", row + 1), e.to_string()),
        })?;
        products.push(rec);
    }

    let diversion_path = dir.join("diversion.csv");
    let diversion = if diversion_path.exists() {
        let mut reader =
            csv::Reader::from_path(&diversion_path).map_err(|e| csv_error(&diversion_path, e))?;
        let mut rows = Vec::new();
        for (row, rec) in reader.deserialize::<DiversionRow>().enumerate() {
            rows.push(rec.map_err(|e| schema("diversion.csv", format!("row {}", row + 1), e.to_string()))?);
        }
        let mut order: Vec<String> = products.iter().map(|p| p.id.clone()).collect();
        if rows.iter().any(|r| r.from == OUTSIDE || r.to == OUTSIDE) {
            order.push(OUTSIDE.to_owned());
        }
        for r in &rows {
            for id in [&r.from, &r.to] {
                if !order.contains(id) {
                    return Err(Error::UnknownProduct(id.clone()));
                }
            }
        }
        let n = order.len();
        let mut matrix = vec![vec![None; n]; n];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = Some(-1.0);
        }
        for r in rows {
            let i = order.iter().position(|o| *o == r.from).unwrap();
            let j = order.iter().position(|o| *o == r.to).unwrap();
            matrix[i][j] = Some(r.value);
        }
        Some(DiversionRecord { order, matrix })
    } else {
        None
    };
    assemble(MarketFile {
        currency: None,
        products,
        diversion,
        expenditure_shares: None,
        merger: None,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => schema(path.display().to_string(), "file", format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Rule;

    const TWO: &str = r#"{
        "products": [
            {"id": "a", "firm": "F", "revenue": 100.0, "margin": 0.3},
            {"id": "b", "firm": "G", "revenue": 50.5, "margin": 0.4}
        ],
        "diversion": {"order": ["b", "a"], "matrix": [[-1, 0.25], [0.1, -1]]},
        "merger": {"firm_a": "F", "firm_b": "G", "efficiencies": {"a": -0.02}, "passthrough": "identity"}
    }"#;

    #[test]
    fn diversion_is_aligned_to_product_order() {
        let l = market_from_json_str(TWO).unwrap();
        assert_eq!(l.diversion.order(), &["a".into(), "b".into()][..]);
        assert_eq!(l.diversion.get(&"a".into(), &"b".into()), Some(0.1));
        assert_eq!(l.diversion.get(&"b".into(), &"a".into()), Some(0.25));
        assert_eq!(l.merger.unwrap().efficiency(&"a".into()), -0.02);
    }

    #[test]
    fn empty_products() {
        let err = market_from_json_str(r#"{"products": []}"#).unwrap_err();
        assert_eq!(err.to_string(), "no products");
    }

    #[test]
    fn bad_margin_names_product() {
        let text = TWO.replace("0.4}", "1.2}");
        let err = market_from_json_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("product b") && msg.contains("margin"), "{msg}");
    }

    #[test]
    fn bad_diagonal_is_rejected() {
        let text = TWO.replace("[[-1, 0.25]", "[[0, 0.25]");
        match market_from_json_str(&text).unwrap_err() {
            Error::Invalid(v) => assert_eq!(v[0].rule, Rule::SelfDiversion),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_firm_is_rejected() {
        let text = TWO.replace(r#""firm_b": "G""#, r#""firm_b": "H""#);
        assert!(matches!(market_from_json_str(&text), Err(Error::UnknownFirm(f)) if f == "H"));
    }

    #[test]
    fn schema_error_names_location() {
        let err = market_from_json_str(r#"{"products": [{"id": "a", "firm": "F", "revenue": "x", "margin": 0.3}]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let text = r#"{
            "currency": "EUR",
            "products": [
                {"id": "a", "firm": "F", "revenue": 0.1, "margin": 0.30000000000000004},
                {"id": "b", "firm": "G", "revenue": 1e300, "margin": 0.123456789012345678}
            ],
            "diversion": {"order": ["a", "b", "OUTSIDE"], "matrix": [[-1, 0.3333333333333333, null], [0.1, -1, 0.2], [0, 0, -1]]},
            "merger": {"firm_a": "F", "firm_b": "G", "passthrough": {"matrix": [[1.1, 0.2], [0.3, 1.4]]}}
        }"#;
        let first = market_from_json_str(text).unwrap();
        let second = market_from_json_str(&market_to_json_string(&first)).unwrap();
        for (p, q) in first.market.products.iter().zip(&second.market.products) {
            assert_eq!(p.revenue.to_bits(), q.revenue.to_bits());
            assert_eq!(p.margin.to_bits(), q.margin.to_bits());
        }
        let (a, b) = (first.diversion.values(), second.diversion.values());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(first.merger, second.merger);
        assert_eq!(second.market.currency.as_deref(), Some("EUR"));
    }

    #[test]
    fn shares_derive_diversion_and_direct_input_wins() {
        let text = r#"{
            "products": [
                {"id": "a", "firm": "F", "revenue": 40, "margin": 0.3},
                {"id": "b", "firm": "G", "revenue": 40, "margin": 0.3}
            ],
            "expenditure_shares": {"budget": 100, "shares": {"a": 0.4, "b": 0.4}}
        }"#;
        let l = market_from_json_str(text).unwrap();
        let d = l.diversion.get(&"a".into(), &"b".into()).unwrap();
        assert!((d - 0.4 / 0.6).abs() < 1e-12);
        assert!(l.warnings.is_empty());

        let both = text.replace(
            r#""expenditure_shares""#,
            r#""diversion": {"order": ["a", "b"], "matrix": [[-1, 0.1], [0.1, -1]]}, "expenditure_shares""#,
        );
        let l = market_from_json_str(&both).unwrap();
        assert_eq!(l.diversion.get(&"a".into(), &"b".into()), Some(0.1));
        assert_eq!(l.warnings.len(), 1);
    }

    #[test]
    fn csv_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("products.csv"), "id,firm,revenue,margin\na,F,100,0.3\nb,G,50,0.4\n").unwrap();
        fs::write(dir.path().join("diversion.csv"), "from,to,value\na,b,0.2\nb,a,0.3\na,OUTSIDE,0.5\n").unwrap();
        let l = load_market(dir.path(), Format::Csv).unwrap();
        assert_eq!(l.diversion.get(&"b".into(), &"a".into()), Some(0.3));
        assert_eq!(l.diversion.get(&"a".into(), &ProductId::outside()), Some(0.5));
        assert_eq!(l.diversion.get(&"b".into(), &ProductId::outside()), None);

        fs::write(dir.path().join("products.csv"), "id,firm,revenue,margin\na,F,100,0.3\nb,G,oops,0.4\n").unwrap();
        let err = load_market(dir.path(), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_market("/nonexistent/market.json", Format::Json).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Io);
    }
}
