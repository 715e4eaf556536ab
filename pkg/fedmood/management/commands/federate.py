from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = (
        "Run a training protocol (naive, selective, fedavg or dp-fedavg) "
        "between simulated clients."
    )
