from ...experiments import cmd_analyze
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Detect particles, track them and compute focus profiles'

    def run(self, request):
        cmd_analyze(request)
