import logging
import time
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError as PydanticValidationError

from ..exceptions import ConfigError, HolovideoError, MaskValidationError, NumericalAbort
from ..experiments import CommandRequest
from ..schemas import ExperimentConfig, load_config

logger = logging.getLogger('holovideo.commands')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def exit_code_for(exc):
    if isinstance(exc, MaskValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, NumericalAbort):
        return EXIT_NUMERICAL
    return EXIT_USAGE


class ExperimentCommand(BaseCommand):
    """
    Shared options and error handling for the experiment commands.

    Subclasses implement ``run(request)``. The run manifest is written whether
    the command succeeds or fails; failures surface as ``CommandError`` whose
    ``returncode`` is 1 for usage and configuration problems, 2 for mask
    validation and 3 for a numerical abort.
    """

    handled = (HolovideoError, PydanticValidationError, OSError)

    def add_arguments(self, parser):
        parser.add_argument('--config', type=Path, help='YAML experiment config')
        parser.add_argument('--out', type=Path, help='output directory')
        parser.add_argument('--seed', type=int, help='override the config seed')
        parser.add_argument('--jobs', type=int, default=1, help='parallel benchmark cells (-1 for all cores)')
        parser.add_argument('--quiet', action='store_true', help='only log warnings and errors (same as --verbosity 0)')

    def run(self, request):
        raise NotImplementedError('subclasses of ExperimentCommand must provide a run() method')

    def build_request(self, options):
        config = load_config(options['config']) if options.get('config') else ExperimentConfig()
        seed = options.get('seed')
        if seed is not None:
            if seed < 0:
                raise ConfigError(f"seed must be >= 0, got {seed}")
            config = config.model_copy(update={'seed': seed})
        jobs = options.get('jobs', 1)
        if jobs < 1 and jobs != -1:
            raise ConfigError(f"--jobs must be >= 1 (or -1 for all cores), got {jobs}")
        if options.get('out') is not None:
            out_dir = options['out']
        elif config.output_dir:
            out_dir = config.resolve_path(config.output_dir)
        else:
            out_dir = settings.OUTPUT_ROOT / self.command_name
        return CommandRequest(self.command_name, config, out_dir, jobs=jobs, quiet=self.is_quiet(options))

    @staticmethod
    def is_quiet(options):
        return options.get('quiet', False) or options.get('verbosity', 1) == 0

    @property
    def command_name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def handle(self, *args, **options):
        package_logger = logging.getLogger('holovideo')
        level = package_logger.level
        if self.is_quiet(options):
            package_logger.setLevel(logging.WARNING)
        try:
            self._handle(options)
        finally:
            package_logger.setLevel(level)

    def _handle(self, options):
        try:
            request = self.build_request(options)
        except ConfigError as exc:
            logger.error("%s", exc)
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc

        logger.info("Command: %s (out=%s, seed=%s, jobs=%s)",
                    request.command, request.out_dir, request.config.seed, request.jobs)
        started = time.perf_counter()
        try:
            self.run(request)
        except self.handled as exc:
            code = exit_code_for(exc)
            if isinstance(exc, MaskValidationError):
                request.manifest.extra['mask_report'] = exc.report.as_dict()
            if isinstance(exc, NumericalAbort) and exc.trace is not None:
                request.manifest.extra['stop_reason'] = exc.trace.stop_reason
            request.manifest.extra['error'] = str(exc)
            logger.error("%s failed with exit code %d: %s", request.command, code, exc)
            self._finish(request)
            raise CommandError(str(exc), returncode=code) from exc

        path = self._finish(request)
        logger.info("%s finished in %.2f s, %d outputs listed in %s",
                    request.command, time.perf_counter() - started, len(request.manifest.outputs), path)
        if not self.is_quiet(options):
            count = len(request.manifest.outputs)
            self.stdout.write(self.style.SUCCESS(f"{request.command}: {count} outputs in {request.out_dir}"))

    @staticmethod
    def _finish(request):
        try:
            return request.manifest.write()
        except OSError as exc:
            logger.error("could not write manifest: %s", exc)
            return None
