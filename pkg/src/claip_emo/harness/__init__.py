from claip_emo.harness.ablation import AblationArm, ablation_arms, run_ablation
from claip_emo.harness.dataset_io import load_dataset, save_dataset
from claip_emo.harness.evaluate import (
    ConstantPredictor, CrossValidationResult, FoldReport, RawFeatureReadout, cross_validate, evaluate)
from claip_emo.harness.export import export_features
from claip_emo.harness.folds import check_no_leakage, load_folds, make_folds, save_folds
from claip_emo.harness.metrics import confusion_matrix, recall_scores, uar_war
from claip_emo.harness.synthetic import ClipSample, DatasetSpec, SyntheticDataset, generate
