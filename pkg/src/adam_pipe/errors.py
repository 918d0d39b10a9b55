"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(PipelineError):
    exit_code = 3


class NumericError(PipelineError):
    exit_code = 4
