use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use ppi_core::hw::hw_decompose;
use ppi_core::linalg::{ComplexMatrix, Tolerance};
use ppi_core::operators::{
    build_example_pair, build_model_sum, build_model_tuple, conjugate_tuple,
    is_power_partial_isometry, model_signature, random_model_family, random_ppi_instance,
    random_unitary, seeded_rng, truncated_shift, RandomSpecLimits, SlotKind, TwistedTuple,
};
use ppi_core::twisted::{
    classify_partition, commutant_dimension, decompose_tuple, equivalence_check, verify_twisted,
    Certificate, EquivalenceVerdict, LeafPartition,
};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::document::{Matrix, Num, SchemaError, SpecDocument, TupleDocument, SCHEMA_VERSION};

/// Input problems. All of them exit with status 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_name}: schema error: {error}")]
    Schema {
        source_name: String,
        error: SchemaError,
    },
    #[error("{0}")]
    Usage(String),
}

/// A finished command: the document to print and whether it passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub text: String,
    /// One-line summary for standard error when the command failed.
    pub diagnostic: Option<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub tol: Tolerance,
    pub emit_intertwiner: bool,
    pub timing: bool,
}

#[derive(Serialize)]
struct ToleranceOut {
    eps: Num,
    rank_eps: Num,
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    schema_version: &'static str,
    command: &'a str,
    tolerance: ToleranceOut,
    pass: bool,
    result: R,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

#[derive(Serialize)]
struct Timing {
    seconds: Num,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

impl Context {
    fn finish<R: Serialize>(
        &self,
        command: &str,
        started: Instant,
        pass: bool,
        result: R,
        diagnostic: Option<String>,
    ) -> Outcome {
        let report = Report {
            schema_version: SCHEMA_VERSION,
            command,
            tolerance: ToleranceOut {
                eps: Num(self.tol.eps),
                rank_eps: Num(self.tol.rank_eps),
            },
            pass,
            result,
            timing: self.timing.then(|| Timing {
                seconds: Num(started.elapsed().as_secs_f64()),
            }),
        };
        Outcome {
            pass,
            text: to_json(&report),
            diagnostic: if pass { None } else { diagnostic },
        }
    }

    fn intertwiner(&self, m: &ComplexMatrix) -> Option<Matrix> {
        self.emit_intertwiner.then(|| Matrix::encode(m))
    }
}

pub fn read_source(path: &str) -> Result<String, CliError> {
    let text = if path == "-" {
        std::io::read_to_string(std::io::stdin())
    } else {
        std::fs::read_to_string(path)
    };
    text.map_err(|source| CliError::Io {
        path: path.to_string(),
        source,
    })
}

pub fn load_tuple(path: &str) -> Result<(TupleDocument, TwistedTuple), CliError> {
    let text = read_source(path)?;
    let schema = |error| CliError::Schema {
        source_name: path.to_string(),
        error,
    };
    let doc = TupleDocument::parse(&text).map_err(schema)?;
    let t = doc.to_tuple().map_err(schema)?;
    Ok((doc, t))
}

fn slots_json(m: &[SlotKind]) -> Vec<String> {
    m.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct ResidualRow {
    relation: String,
    residual: Num,
}

pub fn verify(t: &TwistedTuple, ctx: &Context) -> Outcome {
    let started = Instant::now();
    let r = verify_twisted(t, &ctx.tol);
    let worst = r.worst().map(|(k, _)| k.to_string());
    let failures: Vec<String> = r.failures().map(|(k, _)| k.to_string()).collect();
    let residuals: Vec<ResidualRow> = r
        .residuals
        .iter()
        .map(|(k, &v)| ResidualRow {
            relation: k.to_string(),
            residual: Num(v),
        })
        .collect();
    let diagnostic = worst.as_ref().map(|w| {
        format!(
            "{} relation(s) fail; worst is {w} with residual {:.3e}",
            failures.len(),
            r.max_residual
        )
    });
    let result = json!({
        "dim": t.dim(),
        "operators": t.len(),
        "max_residual": Num(r.max_residual),
        "worst": worst,
        "failures": failures,
        "residuals": residuals,
    });
    ctx.finish("verify", started, r.pass, result, diagnostic)
}

pub fn hw(
    doc: &TupleDocument,
    t: &TwistedTuple,
    op: &str,
    ctx: &Context,
) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let index = doc
        .operator_index(op)
        .ok_or_else(|| CliError::Usage(format!("--op: no operator named {op:?}")))?;
    let v = t.op(index);
    let power = is_power_partial_isometry(v, &ctx.tol);
    if !power.pass {
        let k = power.first_failing_power;
        let result = json!({
            "operator": op,
            "dim": t.dim(),
            "error": "not a power partial isometry",
            "first_failing_power": k,
            "power_residuals": power.residuals.iter().map(|&x| Num(x)).collect::<Vec<_>>(),
        });
        let msg = format!(
            "{op} is not a power partial isometry: power {} fails",
            k.map_or("?".to_string(), |k| k.to_string())
        );
        return Ok(ctx.finish("hw", started, false, result, Some(msg)));
    }
    Ok(match hw_decompose(v, &ctx.tol) {
        Ok(dec) => {
            let blocks: Vec<Value> = dec
                .block_signature()
                .into_iter()
                .map(|(p, mult)| json!({"p": p, "mult": mult}))
                .collect();
            let pass = dec.residual <= ctx.tol.eps;
            let result = json!({
                "operator": op,
                "dim": t.dim(),
                "unitary_dim": dec.unitary_dim(),
                "blocks": blocks,
                "shift_mult": dec.shift_mult,
                "backshift_mult": dec.backshift_mult,
                "residual": Num(dec.residual),
                "intertwiner": ctx.intertwiner(&dec.intertwiner),
            });
            let msg = format!(
                "reconstruction residual {:.3e} exceeds tolerance",
                dec.residual
            );
            ctx.finish("hw", started, pass, result, Some(msg))
        }
        Err(e) => {
            let result = json!({"operator": op, "dim": t.dim(), "error": e.to_string()});
            ctx.finish("hw", started, false, result, Some(format!("{op}: {e}")))
        }
    })
}

fn partition_json(p: &LeafPartition) -> Value {
    let truncated: BTreeMap<String, &Vec<usize>> = p
        .truncated
        .iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    json!({
        "multiindex": slots_json(&p.multiindex),
        "unitary": p.unitary,
        "truncated": truncated,
        "display": p.to_string(),
    })
}

fn matrix_rows<K: ToString>(m: &BTreeMap<K, ComplexMatrix>, key: &str) -> Vec<Value> {
    m.iter()
        .map(|(k, u)| json!({key: k.to_string(), "matrix": Matrix::encode(u)}))
        .collect()
}

pub fn decompose(t: &TwistedTuple, ctx: &Context) -> Outcome {
    let started = Instant::now();
    let check = verify_twisted(t, &ctx.tol);
    if !check.pass {
        let worst = check.worst().map(|(k, _)| k.to_string());
        let result = json!({
            "error": "input fails the twisted relations",
            "worst": worst,
            "max_residual": Num(check.max_residual),
        });
        let msg = format!(
            "input is not a twisted tuple: {} residual {:.3e}",
            worst.unwrap_or_default(),
            check.max_residual
        );
        return ctx.finish("decompose", started, false, result, Some(msg));
    }
    let tree = match decompose_tuple(t, &ctx.tol) {
        Ok(tree) => tree,
        Err(e) => {
            let result = json!({"error": e.to_string()});
            return ctx.finish("decompose", started, false, result, Some(e.to_string()));
        }
    };
    let partition = classify_partition(&tree);
    let leaves: Vec<Value> = tree
        .leaves
        .iter()
        .map(|l| {
            let twists: Vec<Value> = l
                .twists
                .iter()
                .map(|(&(i, j), u)| json!({"i": i, "j": j, "matrix": Matrix::encode(u)}))
                .collect();
            json!({
                "label": l.label(),
                "multiindex": slots_json(&l.multiindex),
                "leaf_dim": l.leaf_dim,
                "mult_dim": l.mult_dim,
                "residual": Num(l.residual),
                "slot_unitaries": matrix_rows(&l.slot_unitaries, "slot"),
                "twists": twists,
            })
        })
        .collect();
    let pass = tree.residual <= ctx.tol.eps;
    let result = json!({
        "dim": tree.ambient_dim,
        "operators": tree.num_ops,
        "residual": Num(tree.residual),
        "max_twist_gap": Num(tree.max_twist_gap),
        "leaves": leaves,
        "partition": {
            "global": partition.global.as_ref().map(partition_json),
            "leaves": partition.leaves.iter().map(partition_json).collect::<Vec<_>>(),
        },
        "intertwiner": ctx.intertwiner(&tree.intertwiner),
    });
    let msg = format!(
        "reconstruction residual {:.3e} exceeds tolerance",
        tree.residual
    );
    ctx.finish("decompose", started, pass, result, Some(msg))
}

pub fn commutant(t: &TwistedTuple, ctx: &Context) -> Outcome {
    let started = Instant::now();
    let k = commutant_dimension(t.ops(), t.dim(), &ctx.tol);
    let result = json!({
        "dim": t.dim(),
        "commutant_dimension": k,
        "irreducible": k == 1,
    });
    ctx.finish("commutant", started, true, result, None)
}

fn certificate_json(c: &Certificate) -> Value {
    let kind = match c {
        Certificate::DimensionMismatch { .. } => "dimension",
        Certificate::LengthMismatch { .. } => "length",
        Certificate::LeafStructure { .. } => "leaf-structure",
        Certificate::Spectral { .. } => "spectral",
    };
    json!({"kind": kind, "detail": c.to_string()})
}

pub fn equiv(a: &TwistedTuple, b: &TwistedTuple, ctx: &Context) -> Outcome {
    let started = Instant::now();
    let (pass, result, msg) = match equivalence_check(a, b, &ctx.tol) {
        Ok(EquivalenceVerdict::Equivalent {
            intertwiner,
            residual,
        }) => (
            true,
            json!({
                "verdict": "EQUIVALENT",
                "residual": Num(residual),
                "intertwiner": ctx.intertwiner(&intertwiner),
            }),
            String::new(),
        ),
        Ok(EquivalenceVerdict::NotEquivalent(c)) => (
            false,
            json!({"verdict": "NOT-EQUIVALENT", "certificate": certificate_json(&c)}),
            format!("not equivalent: {c}"),
        ),
        Ok(EquivalenceVerdict::Inconclusive { reason }) => (
            false,
            json!({"verdict": "INCONCLUSIVE", "reason": reason}),
            format!("inconclusive: {reason}"),
        ),
        Err(e) => (
            false,
            json!({"verdict": "INCONCLUSIVE", "reason": e.to_string()}),
            format!("inconclusive: {e}"),
        ),
    };
    ctx.finish("equiv", started, pass, result, Some(msg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Two operators on (C^p ⊗ C^p)², twisted by a scalar λ.
    Example43,
    /// The single truncated shift J_p.
    TruncatedShift,
    /// A seeded tensor model, or a direct sum of two.
    RandomModel,
    /// One seeded power partial isometry with known block structure.
    RandomPpi,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Example43 => "example43",
            Preset::TruncatedShift => "truncated-shift",
            Preset::RandomModel => "random-model",
            Preset::RandomPpi => "random-ppi",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateRequest {
    pub preset: Option<Preset>,
    pub spec: Option<String>,
    pub p: usize,
    pub lambda: String,
    pub seed: u64,
    pub scramble: bool,
}

fn parse_lambda(s: &str) -> Result<Complex64, CliError> {
    let bad = || CliError::Usage(format!("--lambda: expected RE,IM, got {s:?}"));
    let (re, im) = s.split_once(',').ok_or_else(bad)?;
    let re: f64 = re.trim().parse().map_err(|_| bad())?;
    let im: f64 = im.trim().parse().map_err(|_| bad())?;
    Ok(Complex64::new(re, im))
}

fn signature_json(sig: &[(Vec<SlotKind>, usize)]) -> Value {
    sig.iter()
        .map(|(m, k)| json!({"multiindex": slots_json(m), "mult_dim": k}))
        .collect()
}

pub fn generate(req: &GenerateRequest, tol: &Tolerance) -> Result<String, CliError> {
    let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
    let mut meta: BTreeMap<String, Value> = BTreeMap::new();
    let t = match (req.preset, &req.spec) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("--preset and --spec are exclusive".into()))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --preset or --spec is required".into(),
            ))
        }
        (None, Some(path)) => {
            let schema = |error| CliError::Schema {
                source_name: path.clone(),
                error,
            };
            let spec = SpecDocument::parse(&read_source(path)?)
                .and_then(|d| d.to_spec())
                .map_err(schema)?;
            let t = build_model_tuple(&spec, tol)
                .map_err(|e| schema(SchemaError::field("", e.to_string())))?;
            meta.insert("generator".into(), json!("spec"));
            meta.insert(
                "signature".into(),
                signature_json(&model_signature(&[spec])),
            );
            t
        }
        (Some(preset), None) => {
            meta.insert("generator".into(), json!(preset.name()));
            match preset {
                Preset::Example43 => {
                    let lambda = parse_lambda(&req.lambda)?;
                    meta.insert("p".into(), json!(req.p));
                    meta.insert("lambda".into(), json!([Num(lambda.re), Num(lambda.im)]));
                    build_example_pair(req.p, lambda, tol).map_err(|e| usage(&e))?
                }
                Preset::TruncatedShift => {
                    meta.insert("p".into(), json!(req.p));
                    TwistedTuple::single(truncated_shift(req.p).map_err(|e| usage(&e))?)
                }
                Preset::RandomModel => {
                    let specs = random_model_family(req.seed, RandomSpecLimits::default());
                    meta.insert("seed".into(), json!(req.seed));
                    meta.insert("signature".into(), signature_json(&model_signature(&specs)));
                    build_model_sum(&specs, tol).map_err(|e| usage(&e))?
                }
                Preset::RandomPpi => {
                    let (v, inst) = random_ppi_instance(req.seed);
                    meta.insert("seed".into(), json!(req.seed));
                    meta.insert("unitary_dim".into(), json!(inst.unitary_dim));
                    let blocks: Vec<Value> = inst
                        .blocks
                        .iter()
                        .map(|&(p, m)| json!({"p": p, "mult": m}))
                        .collect();
                    meta.insert("blocks".into(), json!(blocks));
                    TwistedTuple::single(v)
                }
            }
        }
    };
    let t = if req.scramble {
        // A stream separate from the one that drew the model.
        let w = random_unitary(t.dim(), &mut seeded_rng(req.seed ^ 0x9e37_79b9_7f4a_7c15));
        meta.insert("scramble_seed".into(), json!(req.seed));
        conjugate_tuple(&t, &w, tol).map_err(|e| usage(&e))?
    } else {
        t
    };
    Ok(to_json(&TupleDocument::from_tuple(&t, meta)))
}
