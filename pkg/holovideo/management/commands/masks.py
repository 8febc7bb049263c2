from ...experiments import cmd_masks
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Generate, calibrate and validate coded-exposure masks'

    def run(self, request):
        cmd_masks(request)
