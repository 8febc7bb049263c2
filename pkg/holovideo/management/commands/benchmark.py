from ...experiments import cmd_benchmark
from ..base import ExperimentCommand


class Command(ExperimentCommand):
    help = 'Sweep PSNR over subsampling fraction and plane spacing'

    def run(self, request):
        cmd_benchmark(request)
