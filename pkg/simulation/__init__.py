"""
Federated-learning simulation library.

Shared numerics and data live in ``simulation.shared``; client-side
optimisation in ``simulation.localopt``; the server loop in
``simulation.federation``; flatness diagnostics in ``simulation.flatness``.
"""
