from django.apps import AppConfig


class TrainerConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.trainer"
    verbose_name = "Dual reward/policy trainer"
