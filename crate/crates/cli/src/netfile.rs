//! Plain-text network description, one layer per line:
//!
//! ```text
//! input B H D
//! conv F S P K
//! pool F S P
//! fc L
//! ```
//!
//! `#` starts a comment. `input` comes first, feature layers next, and the
//! fully-connected layers last. A fourth field on `pool` lines is accepted
//! so that a non-zero filter count surfaces as a validation finding instead
//! of a syntax error.

use std::fmt::Write;

use thiserror::Error;
use trainplan_core::network::{
    ClassifierLayerSpec, FeatureLayerSpec, LayerKind, NetworkSpec, TensorShape,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct NetFileError {
    pub line: usize,
    pub message: String,
}

pub fn parse_network(text: &str) -> Result<NetworkSpec, NetFileError> {
    let mut input = None;
    let mut features = Vec::new();
    let mut classifier = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| NetFileError { line, message };
        let mut tokens = content.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let args: Vec<u64> = tokens
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|_| err(format!("expected a non-negative integer, found {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        let arity = |n: &[usize]| {
            if n.contains(&args.len()) {
                Ok(())
            } else {
                Err(err(format!(
                    "`{keyword}` takes {} arguments, found {}",
                    n.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" or "),
                    args.len()
                )))
            }
        };

        match keyword {
            "input" => {
                arity(&[3])?;
                if input.is_some() {
                    return Err(err("duplicate `input` line".into()));
                }
                if !features.is_empty() || !classifier.is_empty() {
                    return Err(err("`input` must come before any layer".into()));
                }
                input = Some(TensorShape::new(args[0], args[1], args[2]));
            }
            "conv" | "pool" => {
                if input.is_none() {
                    return Err(err("`input` must come before any layer".into()));
                }
                if !classifier.is_empty() {
                    return Err(err(format!("`{keyword}` after a fully-connected layer")));
                }
                let layer = if keyword == "conv" {
                    arity(&[4])?;
                    FeatureLayerSpec::conv(args[0], args[1], args[2], args[3])
                } else {
                    arity(&[3, 4])?;
                    FeatureLayerSpec {
                        kind: LayerKind::Pooling,
                        filter_size: args[0],
                        stride: args[1],
                        padding: args[2],
                        filter_count: args.get(3).copied().unwrap_or(0),
                    }
                };
                features.push(layer);
            }
            "fc" => {
                if input.is_none() {
                    return Err(err("`input` must come before any layer".into()));
                }
                arity(&[1])?;
                classifier.push(ClassifierLayerSpec {
                    neuron_count: args[0],
                });
            }
            other => return Err(err(format!("unknown keyword {other:?}"))),
        }
    }

    let input = input.ok_or(NetFileError {
        line: 0,
        message: "missing `input` line".into(),
    })?;
    Ok(NetworkSpec::new(input, features, classifier))
}

pub fn render_network(network: &NetworkSpec) -> String {
    let mut out = String::new();
    let s = network.input_shape;
    let _ = writeln!(out, "input {} {} {}", s.width, s.height, s.depth);
    for l in &network.feature_layers {
        match l.kind {
            LayerKind::Convolution => {
                let _ = writeln!(
                    out,
                    "conv {} {} {} {}",
                    l.filter_size, l.stride, l.padding, l.filter_count
                );
            }
            LayerKind::Pooling if l.filter_count == 0 => {
                let _ = writeln!(out, "pool {} {} {}", l.filter_size, l.stride, l.padding);
            }
            LayerKind::Pooling => {
                let _ = writeln!(
                    out,
                    "pool {} {} {} {}",
                    l.filter_size, l.stride, l.padding, l.filter_count
                );
            }
        }
    }
    for l in &network.classifier_layers {
        let _ = writeln!(out, "fc {}", l.neuron_count);
    }
    out
}
