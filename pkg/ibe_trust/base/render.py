from jinja2 import Environment, PackageLoader
import logging

logger = logging.getLogger(__name__)


def text_render(template: str, data) -> str:
    env = Environment(
        loader=PackageLoader("ibe_trust", "templates"),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["mj"] = lambda joules: f"{joules * 1e3:.3f}"
    env.filters["uj"] = lambda joules: f"{joules * 1e6:.2f}"

    template = env.get_template(template)
    logger.debug("rendering template %s", template.name)

    return template.render(data=data)
