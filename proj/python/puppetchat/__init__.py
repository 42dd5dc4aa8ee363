"""Python bindings for the puppetchat core.

Library documents and scripts are passed as text; results come back as
plain dicts and lists. Failures raise PuppetchatError with `code` and
`subject` attributes.
"""

from ._puppetchat import (
    PuppetchatError,
    Service,
    analyze,
    canonical_library,
    embed,
    lint,
    narrate,
    propose_tags,
    recommend,
    run_script,
    score_text,
)

__all__ = [
    "PuppetchatError",
    "Service",
    "analyze",
    "canonical_library",
    "embed",
    "lint",
    "narrate",
    "propose_tags",
    "recommend",
    "run_script",
    "score_text",
]
