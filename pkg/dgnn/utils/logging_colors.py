import logging

logger = logging.getLogger("dgnn")


def setup_logging(level=logging.INFO, log_file=None):
    """
    Rich console logging on stderr plus an optional JSON-lines file log.

    stdout is left alone so CSV rows printed by the CLI stay parseable.
    """

    from rich.console import Console
    from rich.logging import RichHandler
    from rich.theme import Theme
    from rich.traceback import install as traceback_install

    console = Console(
        stderr=True,
        log_time=True,
        log_time_format="%H:%M:%S",
        theme=Theme(
            {
                "traceback.border": "black",
                "traceback.border.syntax_error": "black",
            }
        ),
    )
    traceback_install(
        console=console,
        extra_lines=1,
        max_frames=10,
        width=console.width,
        word_wrap=False,
        indent_guides=False,
        suppress=[],
    )
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    while logger.hasHandlers() and len(logger.handlers) > 0:
        logger.removeHandler(logger.handlers[0])

    rh = RichHandler(
        show_time=True,
        omit_repeated_times=False,
        show_level=True,
        show_path=False,
        markup=False,
        rich_tracebacks=True,
        log_time_format="%H:%M:%S",
        level=level,
        console=console,
    )
    rh.setLevel(level)
    logger.addHandler(rh)

    if log_file:
        fh = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        fh.setFormatter(
            logging.Formatter(
                '{ "asctime":"%(asctime)s", "created":%(created)f, "facility":"%(name)s", "level":"%(levelname)s", "module":"%(module)s", "func":"%(funcName)s", "msg":"%(message)s" }'
            )
        )
        fh.setLevel(logging.DEBUG)
        logger.addHandler(fh)

    # overrides
    logging.getLogger("numexpr").setLevel(logging.ERROR)

    return logger


setup_logging()
