from mr2xray.model.arch import (
    PRESETS,
    ArchConfig,
    DiscConfig,
    Discriminator,
    FeatureNet,
    FeatureNetConfig,
    Generator,
    build_discriminator,
    build_feature_net,
    build_generator,
    get_preset,
)
from mr2xray.model.training import (
    LOSS_LOG_COLUMNS,
    Predictor,
    TrainerConfig,
    TrainingDiverged,
    TrainResult,
    infer,
    load_predictor,
    masked_mae_on,
    predict_array,
    train,
    write_checkpoint,
)
