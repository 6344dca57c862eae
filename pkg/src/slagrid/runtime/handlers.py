"""Pluggable function logic.

A handler is a callable taking a :class:`Ctx`.  Plain functions are pure
compute: storage operations they create through the context are queued and
run, in order, once the function returns.  Generator functions interleave
logic with storage by yielding operations and receiving their results::

    def bump(ctx):
        cur = yield ctx.refresh("hits")
        yield ctx.commit("hits", str(int(cur or b"0") + 1).encode())
        return cur

Handler identifiers may carry one argument after a colon (``put:cache``);
the registry resolves the part before the colon.
"""

from __future__ import annotations

import inspect
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from typing import Any

from ..errors import HandlerError
from ..model import ObjectId


@dataclass(frozen=True)
class Refresh:
    attr: str


@dataclass(frozen=True)
class Commit:
    attr: str
    value: Any  # bytes | None, ("incr", n), or {field: bytes | None}


@dataclass(frozen=True)
class Invoke:
    target: ObjectId
    function: str
    payload: bytes = b""


Op = Refresh | Commit | Invoke


@dataclass(frozen=True)
class TriggerEventInfo:
    source: str
    event: str
    obj: ObjectId


@dataclass
class Ctx:
    obj: ObjectId
    payload: bytes
    dc: str
    arg: str | None = None
    event: TriggerEventInfo | None = None
    queued: list[Op] = field(default_factory=list)

    def _queue(self, op: Op) -> Op:
        self.queued.append(op)
        return op

    def refresh(self, attr: str) -> Refresh:
        return self._queue(Refresh(attr))

    def commit(self, attr: str, value: Any) -> Commit:
        return self._queue(Commit(attr, value))

    def invoke(self, target: ObjectId, function: str, payload: bytes = b"") -> Invoke:
        return self._queue(Invoke(target, function, payload))


Handler = Callable[[Ctx], Any]


def split_handler_id(handler_id: str) -> tuple[str, str | None]:
    base, sep, arg = handler_id.partition(":")
    return base, (arg if sep else None)


class HandlerRegistry:
    """Name -> handler map; ``in`` understands ``name:arg`` identifiers."""

    def __init__(self, handlers: dict[str, Handler] | None = None, *, builtins: bool = True):
        self._h: dict[str, Handler] = dict(BUILTINS) if builtins else {}
        self._h.update(handlers or {})

    def register(self, name: str, fn: Handler | None = None):
        if fn is not None:
            self._h[name] = fn
            return fn

        def deco(f: Handler) -> Handler:
            self._h[name] = f
            return f

        return deco

    def __contains__(self, handler_id: object) -> bool:
        return isinstance(handler_id, str) and split_handler_id(handler_id)[0] in self._h

    def resolve(self, handler_id: str) -> tuple[Handler, str | None]:
        base, arg = split_handler_id(handler_id)
        return self._h[base], arg

    def names(self) -> list[str]:
        return sorted(self._h)


def is_generator_handler(fn: Handler) -> bool:
    return inspect.isgeneratorfunction(fn)


def run_plain(fn: Handler, ctx: Ctx) -> tuple[Any, Iterator[Op] | None]:
    """Call ``fn``; returns ``(result, None)`` or ``(None, generator)``."""
    out = fn(ctx)
    if inspect.isgenerator(out):
        return None, out
    return out, None


# -- builtins -------------------------------------------------------------------


def _need_arg(ctx: Ctx) -> str:
    if not ctx.arg:
        raise HandlerError("this handler needs an attribute argument, e.g. put:cache")
    return ctx.arg


def h_echo(ctx: Ctx):
    return ctx.payload


def h_noop(ctx: Ctx):
    return None


def h_put(ctx: Ctx):
    ctx.commit(_need_arg(ctx), ctx.payload)
    return ctx.payload


def h_get(ctx: Ctx):
    value = yield ctx.refresh(_need_arg(ctx))
    return value


def h_incr(ctx: Ctx):
    ctx.commit(_need_arg(ctx), ("incr", int(ctx.payload or b"1")))


def h_rw(ctx: Ctx):
    attr = _need_arg(ctx)
    old = yield ctx.refresh(attr)
    yield ctx.commit(attr, ctx.payload)
    return old


def h_fail(ctx: Ctx):
    raise HandlerError(f"{ctx.obj}: handler failed on purpose")


def h_call(ctx: Ctx):
    """Invoke ``arg`` on the object named by the payload (``Class#n``)."""
    cls, _, inst = ctx.payload.decode().partition("#")
    result = yield ctx.invoke(ObjectId(cls, int(inst)), _need_arg(ctx))
    return result


BUILTINS: dict[str, Handler] = {
    "echo": h_echo,
    "noop": h_noop,
    "put": h_put,
    "get": h_get,
    "incr": h_incr,
    "rw": h_rw,
    "fail": h_fail,
    "call": h_call,
}
