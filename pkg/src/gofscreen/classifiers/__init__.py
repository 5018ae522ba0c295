"""Logistic regression, decision tree and random forest, written from scratch."""

from .forest import ForestModel, fit_random_forest
from .logistic import LogisticModel, SingleClassError, fit_logistic
from .serialize import load_model, model_from_dict, model_to_dict, save_model
from .tree import (
    Rule,
    SchemaMismatchError,
    TreeModel,
    extract_rule_list,
    fit_decision_tree,
    format_rule_list,
    rules_predict_proba,
)


def predict_proba(model, X):
    """Probability of class 1 for each row of ``X``."""
    return model.predict_proba(X)


__all__ = [
    "ForestModel",
    "LogisticModel",
    "Rule",
    "SchemaMismatchError",
    "SingleClassError",
    "TreeModel",
    "extract_rule_list",
    "fit_decision_tree",
    "fit_logistic",
    "fit_random_forest",
    "format_rule_list",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "predict_proba",
    "rules_predict_proba",
    "save_model",
]
