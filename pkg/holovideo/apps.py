from django.apps import AppConfig


class HolovideoConfig(AppConfig):
    name = 'holovideo'
    verbose_name = 'Compressive holographic video'
