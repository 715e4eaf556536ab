from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Train a model on pooled data (a single client)."

    protocol_flag = False

    def fixed_options(self):
        return {"protocol": "centralized", "clients": 1}
