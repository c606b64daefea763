//! Flat key = value config files mirroring `TrainConfig` field names
//! one-to-one. Unknown keys are errors, never silently absorbed. Missing
//! keys keep their current values, so a file may override any subset.
//!
//! Milestone lists use `fraction:value` pairs separated by `;`, with orbit
//! sets inside elevation milestones comma-separated, e.g.
//! `resolution_milestones = 0:0.25;0.2:0.5;0.5:1` and
//! `elevation_milestones = 0:0;0.5:0,1;0.8:0,1,2`.

use crate::error::{GsError, Result};
use crate::train::{AblationMode, TrainConfig};

pub fn format_config(c: &TrainConfig) -> String {
    let res = c
        .resolution_milestones
        .iter()
        .map(|(f, r)| format!("{f}:{r}"))
        .collect::<Vec<_>>()
        .join(";");
    let elev = c
        .elevation_milestones
        .iter()
        .map(|(f, set)| {
            let ids = set.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
            format!("{f}:{ids}")
        })
        .collect::<Vec<_>>()
        .join(";");
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("total_iters", c.total_iters.to_string());
    kv("lambda", c.lambda.to_string());
    kv("lambda_s", c.lambda_s.to_string());
    kv("lambda_l", c.lambda_l.to_string());
    kv("lr_position", c.lr_position.to_string());
    kv("lr_position_final", c.lr_position_final.to_string());
    kv("lr_color", c.lr_color.to_string());
    kv("lr_opacity", c.lr_opacity.to_string());
    kv("lr_scale", c.lr_scale.to_string());
    kv("lr_rotation", c.lr_rotation.to_string());
    kv("lr_variance", c.lr_variance.to_string());
    kv("adam_beta1", c.adam_beta1.to_string());
    kv("adam_beta2", c.adam_beta2.to_string());
    kv("adam_eps", c.adam_eps.to_string());
    kv("densify_interval", c.densify_interval.to_string());
    kv("densify_start", c.densify_start.to_string());
    kv("densify_stop", c.densify_stop.to_string());
    kv("densify_grad_threshold", c.densify_grad_threshold.to_string());
    kv("prune_opacity_threshold", c.prune_opacity_threshold.to_string());
    kv("opacity_reset_interval", c.opacity_reset_interval.to_string());
    kv("split_scale_divisor", c.split_scale_divisor.to_string());
    kv("clone_scale_fraction", c.clone_scale_fraction.to_string());
    kv("max_points", c.max_points.to_string());
    kv("resolution_milestones", res);
    kv("elevation_milestones", elev);
    kv("seed1", c.seed1.to_string());
    kv("seed2", c.seed2.to_string());
    kv("init_points", c.init_points.to_string());
    kv("random_background", c.random_background.to_string());
    kv("ablation_mode", c.ablation_mode.to_string());
    kv("ensemble_k", c.ensemble_k.to_string());
    kv("detach_uncertainty_weight", c.detach_uncertainty_weight.to_string());
    kv("checkpoint_interval", c.checkpoint_interval.to_string());
    out
}

/// Parse a config file on top of the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    update_config_from_str(&mut config, text)?;
    Ok(config)
}

/// Apply `key = value` lines to an existing config.
pub fn update_config_from_str(config: &mut TrainConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            GsError::parse_at(format!("expected `key = value`, got `{line}`"), lineno + 1)
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(config, key, value)
            .map_err(|e| match e {
                GsError::UnknownConfigKey(k) => GsError::UnknownConfigKey(k),
                other => GsError::parse_at(format!("key `{key}`: {other}"), lineno + 1),
            })?;
    }
    config.validate()?;
    Ok(())
}

fn apply_key(c: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(v: &str, what: &str) -> Result<T> {
        v.parse()
            .map_err(|_| GsError::parse(format!("cannot parse `{v}` as {what}")))
    }
    match key {
        "total_iters" => c.total_iters = num(value, "integer")?,
        "lambda" => c.lambda = num(value, "number")?,
        "lambda_s" => c.lambda_s = num(value, "number")?,
        "lambda_l" => c.lambda_l = num(value, "number")?,
        "lr_position" => c.lr_position = num(value, "number")?,
        "lr_position_final" => c.lr_position_final = num(value, "number")?,
        "lr_color" => c.lr_color = num(value, "number")?,
        "lr_opacity" => c.lr_opacity = num(value, "number")?,
        "lr_scale" => c.lr_scale = num(value, "number")?,
        "lr_rotation" => c.lr_rotation = num(value, "number")?,
        "lr_variance" => c.lr_variance = num(value, "number")?,
        "adam_beta1" => c.adam_beta1 = num(value, "number")?,
        "adam_beta2" => c.adam_beta2 = num(value, "number")?,
        "adam_eps" => c.adam_eps = num(value, "number")?,
        "densify_interval" => c.densify_interval = num(value, "integer")?,
        "densify_start" => c.densify_start = num(value, "integer")?,
        "densify_stop" => c.densify_stop = num(value, "integer")?,
        "densify_grad_threshold" => c.densify_grad_threshold = num(value, "number")?,
        "prune_opacity_threshold" => c.prune_opacity_threshold = num(value, "number")?,
        "opacity_reset_interval" => c.opacity_reset_interval = num(value, "integer")?,
        "split_scale_divisor" => c.split_scale_divisor = num(value, "number")?,
        "clone_scale_fraction" => c.clone_scale_fraction = num(value, "number")?,
        "max_points" => c.max_points = num(value, "integer")?,
        "resolution_milestones" => c.resolution_milestones = parse_resolution_milestones(value)?,
        "elevation_milestones" => c.elevation_milestones = parse_elevation_milestones(value)?,
        "seed1" => c.seed1 = num(value, "integer")?,
        "seed2" => c.seed2 = num(value, "integer")?,
        "init_points" => c.init_points = num(value, "integer")?,
        "random_background" => c.random_background = num(value, "bool")?,
        "ablation_mode" => c.ablation_mode = value.parse::<AblationMode>()?,
        "ensemble_k" => c.ensemble_k = num(value, "integer")?,
        "detach_uncertainty_weight" => c.detach_uncertainty_weight = num(value, "bool")?,
        "checkpoint_interval" => c.checkpoint_interval = num(value, "integer")?,
        other => return Err(GsError::UnknownConfigKey(other.to_string())),
    }
    Ok(())
}

fn parse_resolution_milestones(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(';')
        .map(|pair| {
            let (f, r) = pair
                .split_once(':')
                .ok_or_else(|| GsError::parse(format!("milestone `{pair}` needs `fraction:ratio`")))?;
            Ok((
                f.trim()
                    .parse()
                    .map_err(|_| GsError::parse(format!("bad fraction `{f}`")))?,
                r.trim()
                    .parse()
                    .map_err(|_| GsError::parse(format!("bad ratio `{r}`")))?,
            ))
        })
        .collect()
}

fn parse_elevation_milestones(value: &str) -> Result<Vec<(f64, Vec<usize>)>> {
    value
        .split(';')
        .map(|pair| {
            let (f, ids) = pair.split_once(':').ok_or_else(|| {
                GsError::parse(format!("milestone `{pair}` needs `fraction:orbit,orbit,...`"))
            })?;
            let frac = f
                .trim()
                .parse()
                .map_err(|_| GsError::parse(format!("bad fraction `{f}`")))?;
            let set = ids
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| GsError::parse(format!("bad orbit id `{s}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok((frac, set))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut config = TrainConfig::default();
        config.total_iters = 1234;
        config.lambda = 3.5;
        config.ablation_mode = AblationMode::EnsembleK;
        config.ensemble_k = 4;
        config.resolution_milestones = vec![(0.0, 0.5), (0.3, 1.0)];
        config.elevation_milestones = vec![(0.0, vec![0, 2]), (0.6, vec![0, 1, 2])];
        let text = format_config(&config);
        let back = parse_config(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let mut config = TrainConfig::default();
        match update_config_from_str(&mut config, "lamda = 5\n") {
            Err(GsError::UnknownConfigKey(k)) => assert_eq!(k, "lamda"),
            other => panic!("expected UnknownConfigKey, got {other:?}"),
        }
    }

    #[test]
    fn partial_file_overrides_subset() {
        let mut config = TrainConfig::default();
        update_config_from_str(&mut config, "# comment\n\nlambda = 2.5\nseed1 = 42\n").unwrap();
        assert_eq!(config.lambda, 2.5);
        assert_eq!(config.seed1, 42);
        assert_eq!(config.total_iters, 5000);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut config = TrainConfig::default();
        let err = update_config_from_str(&mut config, "lambda = banana\n").unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn invalid_config_after_apply_is_rejected() {
        let mut config = TrainConfig::default();
        assert!(update_config_from_str(&mut config, "init_points = 0\n").is_err());
    }
}
