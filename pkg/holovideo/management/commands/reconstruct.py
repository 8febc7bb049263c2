from ...experiments import cmd_reconstruct
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Reconstruct a 4D volume by back-propagation and/or TwIST'

    def run(self, request):
        cmd_reconstruct(request)
