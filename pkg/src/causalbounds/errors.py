"""Shared error types."""


class SizeLimitError(RuntimeError):
    """An enumeration or program-size limit would be exceeded.

    Raised instead of silently truncating; the message names the limit and,
    where one exists, the method to use instead.
    """
