from django.apps import AppConfig


class MdpConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.mdp"
    verbose_name = "Token-level MDPs"
