"""JSON Schemas (draft 2020-12) for ``--format json`` output of each subcommand."""

_num = {"type": ["number", "null"]}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_count = {"type": "integer", "minimum": 0}

_per_set = {
    "type": "object",
    "required": ["set_id", "lambda_bar", "lambda_barbar", "w_bar", "w_barbar", "gap"],
    "properties": {"set_id": {"type": "string"}, "lambda_bar": _prob, "lambda_barbar": _prob,
                   "w_bar": _num, "w_barbar": _num, "gap": _num},
}

_sweep_row = {
    "type": "object",
    "required": ["gamma", "theta", "delta", "alpha", "a_star", "p_at_a_star", "method"],
    "properties": {
        "gamma": {"type": "number", "minimum": 1}, "theta": {"type": "number", "minimum": 1},
        "delta": {"type": "number", "minimum": 1}, "alpha": _prob, "a_star": _count,
        "p_at_a_star": _prob, "method": {"enum": ["exact", "normal"]},
    },
}

SCHEMAS = {
    "match": {
        "type": "object",
        "required": ["n_sets", "J", "total_distance", "unmatched", "sets", "balance"],
        "properties": {
            "n_sets": _count, "J": _count, "total_distance": {"type": "number", "minimum": 0},
            "unmatched": {"type": "array", "items": {"type": "string"}},
            "sets": {"type": "array", "items": {
                "type": "object", "required": ["set_id", "units"],
                "properties": {"set_id": {"type": "string"},
                               "units": {"type": "array", "items": {"type": "string"}}}}},
            "balance": {"type": "array", "items": {
                "type": "object", "required": ["covariate", "smd", "flagged"],
                "properties": {"covariate": {"type": "string"}, "smd": _num,
                               "mean_narrow": _num, "mean_marginal": _num,
                               "flagged": {"type": "boolean"}}}},
        },
    },
    "test": {
        "type": "object",
        "required": ["a", "statistic", "p_upper", "method", "flag", "per_set"],
        "properties": {
            "a": _count, "statistic": _count, "p_upper": _prob,
            "method": {"enum": ["exact", "normal"]},
            "flag": {"enum": [None, "certain", "plausible"]},
            "expectation": _num, "variance": _num,
            "attributed": {"type": "array", "items": {"type": "string"}},
            "per_set": {"type": "array", "items": _per_set},
        },
    },
    "attribute": {
        "type": "object",
        "required": ["a_star", "trace", "statistic", "gamma", "theta", "delta", "alpha"],
        "properties": {
            "gamma": {"type": "number", "minimum": 1}, "theta": {"type": "number", "minimum": 1},
            "delta": {"type": "number", "minimum": 1}, "alpha": _prob,
            "method": {"enum": ["exact", "normal"]}, "multiplier": {"enum": ["prop1", "printed"]},
            "statistic": _count, "a_star": _count,
            "trace": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["a", "p_upper"],
                "properties": {"a": _count, "p_upper": _prob}}},
        },
    },
    "sweep": {"type": "array", "minItems": 1, "items": _sweep_row},
    "nonneg": {
        "type": "object",
        "required": ["table", "n", "alpha", "a_star", "trace"],
        "properties": {
            "table": {"type": "array", "items": _count, "minItems": 4, "maxItems": 4},
            "n": _count, "alpha": _prob, "p_unadjusted": _prob, "a_star": _count,
            "trace": {"type": "array", "items": {
                "type": "object", "required": ["A", "allocation", "p_max"],
                "properties": {"A": _count, "p_max": _prob,
                               "allocation": {"type": "array", "items": _count,
                                              "minItems": 2, "maxItems": 2}}}},
        },
    },
    "calibrate": {
        "type": "object",
        "required": ["coefficients", "random_intercept_sd", "converged", "log_likelihood",
                     "theta_hat", "delta_hat", "warnings"],
        "properties": {
            "coefficients": {"type": "object", "additionalProperties": {"type": "number"}},
            "random_intercept_sd": {"type": "number", "minimum": 0},
            "converged": {"type": "boolean"}, "log_likelihood": {"type": "number"},
            "iterations": _count, "n_groups": _count,
            "theta_hat": {"type": "number", "exclusiveMinimum": 0},
            "delta_hat": {"type": "number", "exclusiveMinimum": 0},
            "group": {"type": "string"},
            "warnings": {"type": "array", "items": {"type": "string"}},
        },
    },
    "simulate": {
        "oneOf": [
            {"type": "object", "required": ["n_sets", "J", "statistic", "units"],
             "properties": {"n_sets": _count, "J": _count, "statistic": _count,
                            "true_A": _count, "units": {"type": "array"}}},
            {"type": "array", "items": {
                "type": "object", "required": ["unit_id", "case_type", "treated", "covariates"]}},
        ],
    },
    "verify": {
        "type": "object",
        "required": ["containment", "attainment", "pass"],
        "properties": {
            "containment": {"type": "object", "additionalProperties": {
                "type": "object", "required": ["checked", "violations"],
                "properties": {"checked": _count, "violations": _count}}},
            "attainment": {"type": "object", "required": ["checked", "failed"]},
            "pass": {"type": "boolean"},
        },
    },
}
