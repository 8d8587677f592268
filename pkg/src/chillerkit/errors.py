"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class ChillerKitError(Exception):
    exit_code = 1
    code = "ERROR"


class ConfigError(ChillerKitError):
    exit_code = 2
    code = "CONFIG_ERROR"


class InputError(ChillerKitError):
    exit_code = 3
    code = "INPUT_ERROR"


class SchemaError(InputError):
    code = "SCHEMA_ERROR"


class EmptyInputError(InputError):
    code = "EMPTY_INPUT"


class GapError(InputError):
    code = "GAP_ERROR"


class InfeasibleError(ChillerKitError):
    exit_code = 4
    code = "INFEASIBLE"


class CyclicityError(InfeasibleError):
    code = "CYCLICITY_ERROR"


class TrainingError(ChillerKitError):
    exit_code = 5
    code = "TRAINING_FAILED"
