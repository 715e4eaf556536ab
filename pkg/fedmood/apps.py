from django.apps import AppConfig


class FedmoodConfig(AppConfig):
    name = "fedmood"
    verbose_name = "Federated mood"

    def ready(self):
        from fedmood import checks  # noqa: F401
