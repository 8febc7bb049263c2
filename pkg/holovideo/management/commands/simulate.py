from ...experiments import cmd_simulate
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Simulate a coded-exposure capture from a scene'

    def run(self, request):
        cmd_simulate(request)
